//! The `wane` command line: train, evaluate, export and inspect runs.
//!
//! A run directory holds `checkpoint.bin`, `split.tsv`, `config.txt` and
//! `train_log.tsv`. The checkpoint records the SHA-256 of the split it was
//! trained on, and every evaluation refuses a split with another hash.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{
    classify, export_embeddings, global_embeddings, inspect_alignment, link_prediction_auc, ClassifierConfig,
    EvalReport,
};
use crate::graph::{split_edges, EdgeSplit};
use crate::model::{Aggregate, Align, Mode};
use crate::text::DEFAULT_MAX_LEN;
use crate::trainer::{TrainConfig, Trainer};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SPLIT_FILE: &str = "split.tsv";
pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "train_log.tsv";

/// Exit status for invalid flags or configuration.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for unreadable or inconsistent data.
pub const EXIT_DATA: i32 = 3;
/// Exit status for numeric failure during training.
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "wane", version, about = "Word-alignment network embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split the edges, train a model and write a run directory.
    Train(TrainArgs),
    /// Link-prediction AUC on the held-out edges of a run.
    EvalLink(EvalArgs),
    /// Vertex-classification accuracy of a run's global embeddings.
    EvalClassify(ClassifyArgs),
    /// Write the global embedding of every vertex as TSV.
    Export(ExportArgs),
    /// Per-word matching norms of one vertex pair (word-by-word models).
    InspectAlignment(InspectArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory with edges.tsv and text.tsv.
    #[arg(long)]
    pub data: PathBuf,
    /// Output run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// `key=value` file of training settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fraction of edges kept for training.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Seed of the edge split; defaults to `--seed`.
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub align: Option<Align>,
    #[arg(long)]
    pub aggregate: Option<Aggregate>,
    #[arg(long)]
    pub structural_dim: Option<usize>,
    #[arg(long)]
    pub alpha1: Option<f64>,
    #[arg(long)]
    pub alpha2: Option<f64>,
    #[arg(long)]
    pub alpha3: Option<f64>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Negatives per loss term: 1, 3 or 5.
    #[arg(long = "K", alias = "negatives")]
    pub negatives: Option<usize>,
    /// Accept any positive `--K`.
    #[arg(long)]
    pub allow_any_k: bool,
    /// Keep probability of word-vector dropout.
    #[arg(long)]
    pub keep_prob: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Draw separate negatives for each loss term.
    #[arg(long)]
    pub per_term_negatives: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Worker threads for batch gradients.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Fixed reduction order; results depend only on seed and thread count.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Dataset directory the run was trained on.
    #[arg(long)]
    pub data: PathBuf,
    /// Split file; defaults to the run's own split.tsv.
    #[arg(long)]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Also write the report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Fraction of labelled vertices used for training.
    #[arg(long, default_value_t = 0.5)]
    pub label_ratio: f64,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Vertex pair as `i,j`.
    #[arg(long, value_parser = parse_edge)]
    pub edge: (usize, usize),
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn parse_edge(s: &str) -> std::result::Result<(usize, usize), String> {
    let (i, j) = s.split_once(',').ok_or("expected `i,j`")?;
    let v = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("bad vertex id `{x}`"));
    Ok((v(i)?, v(j)?))
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Invalid(_) => EXIT_USAGE,
        Error::NonFinite { .. } => EXIT_NUMERIC,
        Error::Io { .. } | Error::Parse { .. } | Error::Graph(_) | Error::Corpus(_) | Error::Shape(_) | Error::Checkpoint(_) => {
            EXIT_DATA
        }
    }
}

/// Parses arguments, runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::EvalLink(a) => cmd_eval_link(a),
        Command::EvalClassify(a) => cmd_eval_classify(a),
        Command::Export(a) => cmd_export(a),
        Command::InspectAlignment(a) => cmd_inspect(a),
    }
}

/// Effective run settings: training config plus split parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub ratio: f64,
    pub split_seed: u64,
}

fn read_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(&name, idx + 1, "expected `key=value`"))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut train = TrainConfig::default();
        let mut ratio = 0.55;
        let mut split_seed = None;
        if let Some(path) = &self.config {
            for (k, v) in read_config_file(path)? {
                let bad = || Error::Config(format!("bad value `{v}` for `{k}`"));
                match k.as_str() {
                    "ratio" => ratio = v.parse().map_err(|_| bad())?,
                    "split_seed" => split_seed = Some(v.parse().map_err(|_| bad())?),
                    _ => train.set(&k, &v)?,
                }
            }
        }
        macro_rules! flag {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        flag! {
            mode => train.mode,
            align => train.align,
            aggregate => train.aggregate,
            structural_dim => train.structural_dim,
            alpha1 => train.alphas[0],
            alpha2 => train.alphas[1],
            alpha3 => train.alphas[2],
            learning_rate => train.learning_rate,
            batch_size => train.batch_size,
            negatives => train.negatives,
            keep_prob => train.keep_prob,
            epochs => train.epochs,
            seed => train.seed,
            max_len => train.max_len,
            threads => train.threads,
            ratio => ratio,
        }
        if self.steps.is_some() {
            train.max_steps = self.steps;
        }
        if self.split_seed.is_some() {
            split_seed = self.split_seed;
        }
        if self.allow_any_k {
            train.allow_any_k = true;
        }
        if self.per_term_negatives {
            train.share_negatives = false;
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::Config(format!("ratio {ratio} must lie in (0, 1)")));
        }
        train.validate()?;
        Ok(RunConfig {
            split_seed: split_seed.unwrap_or(train.seed),
            train,
            ratio,
        })
    }
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn echo_text(echo: &BTreeMap<String, String>) -> String {
    let mut s = String::new();
    for (k, v) in echo {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

pub fn cmd_train(args: TrainArgs) -> Result<()> {
    let run = args.resolve()?;
    let data = Dataset::load(&args.data, run.train.max_len)?;
    let split = split_edges(&data.graph, run.ratio, run.split_seed)?;
    let fingerprint = split.fingerprint();
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_file(&args.out.join(SPLIT_FILE), split.to_tsv())?;

    let mut echo = run.train.echo();
    echo.insert("ratio".into(), run.ratio.to_string());
    echo.insert("split_seed".into(), run.split_seed.to_string());
    echo.insert("split_sha256".into(), fingerprint);
    echo.insert("deterministic".into(), args.deterministic.to_string());
    write_file(&args.out.join(CONFIG_FILE), echo_text(&echo))?;

    let mut trainer = Trainer::new(run.train, &split.train, &data.corpus)?;
    let outcome = trainer.run();
    // The log is kept even when training aborts.
    write_file(&args.out.join(LOG_FILE), trainer.log.to_tsv())?;
    outcome?;
    let steps = trainer.steps_taken();
    let (params, log) = trainer.finish();
    Checkpoint::new(params, echo).save(args.out.join(CHECKPOINT_FILE))?;
    println!(
        "trained {steps} steps on {} ({} train edges); final mean loss {}",
        data.name,
        split.train.num_edges(),
        log.steps.last().map_or(f64::NAN, |&(_, l)| l)
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

struct LoadedRun {
    checkpoint: Checkpoint,
    split: EdgeSplit,
    data: Dataset,
}

fn load_run(args: &RunArgs) -> Result<LoadedRun> {
    let checkpoint = Checkpoint::load(args.run.join(CHECKPOINT_FILE))?;
    let split_path = args.split.clone().unwrap_or_else(|| args.run.join(SPLIT_FILE));
    let text = std::fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
    let split = EdgeSplit::from_tsv(&text, &split_path.display().to_string())?;
    checkpoint.require_split(&split.fingerprint())?;
    let max_len = match checkpoint.echo.get("max_len") {
        Some(v) => v
            .parse()
            .map_err(|_| Error::Corpus(format!("checkpoint records a bad max_len `{v}`")))?,
        None => DEFAULT_MAX_LEN,
    };
    let data = Dataset::load(&args.data, max_len)?;
    if split.train.num_vertices() != data.graph.num_vertices() {
        return Err(Error::Corpus(format!(
            "split covers {} vertices but the dataset has {}",
            split.train.num_vertices(),
            data.graph.num_vertices()
        )));
    }
    checkpoint
        .params
        .check_shapes(data.graph.num_vertices(), data.corpus.vocab.len())?;
    Ok(LoadedRun { checkpoint, split, data })
}

fn emit(report: &EvalReport, path: Option<&Path>) -> Result<()> {
    let text = report.to_tsv();
    print!("{text}");
    let _ = std::io::stdout().flush();
    if let Some(p) = path {
        write_file(p, text)?;
    }
    Ok(())
}

pub fn cmd_eval_link(args: EvalArgs) -> Result<()> {
    let run = load_run(&args.run)?;
    let value = link_prediction_auc(&run.checkpoint.params, &run.data.corpus, &run.split)?;
    let report = EvalReport {
        task: "link_prediction".into(),
        metric: "auc".into(),
        value,
        seed: run.split.seed,
        repeats: Vec::new(),
        echo: run.checkpoint.echo.clone(),
    };
    emit(&report, args.report.as_deref())
}

pub fn cmd_eval_classify(args: ClassifyArgs) -> Result<()> {
    let run = load_run(&args.run)?;
    let labels = run.data.labels.as_ref().ok_or_else(|| {
        Error::Corpus(format!("{} has no labels.tsv", args.run.data.display()))
    })?;
    let embeddings = global_embeddings(&run.checkpoint.params, &run.data.corpus, &run.split.train)?;
    let result = classify(
        &embeddings,
        &labels.classes,
        args.label_ratio,
        args.repeats,
        args.seed,
        ClassifierConfig::default(),
    )?;
    let mut echo = run.checkpoint.echo.clone();
    echo.insert("label_ratio".into(), args.label_ratio.to_string());
    let report = EvalReport {
        task: "classification".into(),
        metric: "accuracy".into(),
        value: result.mean_accuracy,
        seed: args.seed,
        repeats: result.accuracies,
        echo,
    };
    emit(&report, args.report.as_deref())
}

pub fn cmd_export(args: ExportArgs) -> Result<()> {
    let run = load_run(&args.run)?;
    let e = export_embeddings(&run.checkpoint.params, &run.data.corpus, &run.split.train, &args.output)?;
    println!("wrote {} rows x {} dims to {}", e.rows(), e.cols(), args.output.display());
    Ok(())
}

pub fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let run = load_run(&args.run)?;
    let (i, j) = args.edge;
    let text = inspect_alignment(&run.checkpoint.params, &run.data.corpus, i, j)?;
    match &args.output {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
