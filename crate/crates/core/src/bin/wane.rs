fn main() {
    std::process::exit(wane::cli::main_with_args(std::env::args_os()));
}
