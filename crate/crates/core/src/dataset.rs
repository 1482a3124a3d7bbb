//! Dataset directories: `edges.tsv`, `text.tsv` and optionally `labels.tsv`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{load_graph, Graph};
use crate::text::{build_corpus, count_text_vertices, load_labels, Corpus, Labels};

pub const EDGES_FILE: &str = "edges.tsv";
pub const TEXT_FILE: &str = "text.tsv";
pub const LABELS_FILE: &str = "labels.tsv";

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub graph: Graph,
    pub corpus: Corpus,
    pub labels: Option<Labels>,
}

impl Dataset {
    /// The vertex set is fixed by the text file; vertices without edges are
    /// kept as isolated vertices.
    pub fn load(dir: impl AsRef<Path>, max_len: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let text_path = dir.join(TEXT_FILE);
        let n = count_text_vertices(&text_path)?;
        let graph = load_graph(dir.join(EDGES_FILE))?;
        if graph.num_vertices() > n {
            return Err(Error::Corpus(format!(
                "{}: edges reference vertex {} but text covers only 0..{n}",
                dir.display(),
                graph.num_vertices() - 1
            )));
        }
        let graph = graph.with_num_vertices(n)?;
        let corpus = build_corpus(&text_path, n, max_len)?;
        let labels_path = dir.join(LABELS_FILE);
        let labels = if labels_path.exists() {
            Some(load_labels(&labels_path, n)?)
        } else {
            None
        };
        let name = dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |s| s.to_string_lossy().into_owned());
        Ok(Self {
            name,
            graph,
            corpus,
            labels,
        })
    }
}

/// Writes the three files of a dataset directory from raw parts.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    graph: &Graph,
    texts: &[String],
    labels: Option<(&[String], &[usize])>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    };
    let mut edges = String::new();
    for e in graph.edges() {
        if e.weight == 1.0 {
            let _ = writeln!(edges, "{}\t{}", e.u, e.v);
        } else {
            let _ = writeln!(edges, "{}\t{}\t{}", e.u, e.v, e.weight);
        }
    }
    write(EDGES_FILE, edges)?;
    let mut text = String::new();
    for (v, t) in texts.iter().enumerate() {
        let _ = writeln!(text, "{v}\t{t}");
    }
    write(TEXT_FILE, text)?;
    if let Some((names, classes)) = labels {
        let mut body = String::new();
        for (v, &c) in classes.iter().enumerate() {
            let _ = writeln!(body, "{v}\t{}", names[c]);
        }
        write(LABELS_FILE, body)?;
    }
    Ok(())
}
