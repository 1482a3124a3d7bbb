//! Tokenization and fixed-vocabulary id sequences for vertex text.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};

/// Reserved token for vertices without any text. Always id 0.
pub const EMPTY_TOKEN: &str = "<empty>";

/// Default truncation length.
pub const DEFAULT_MAX_LEN: usize = 300;

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(raw: &str) -> Vec<String> {
    raw.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    counts: Vec<usize>,
}

impl Vocabulary {
    /// A vocabulary holding only the reserved empty-text token.
    pub fn new() -> Self {
        let mut v = Self::default();
        v.index.insert(EMPTY_TOKEN.to_string(), 0);
        v.tokens.push(EMPTY_TOKEN.to_string());
        v.counts.push(1);
        v
    }

    fn intern(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            self.counts[id] += 1;
            return id;
        }
        let id = self.tokens.len();
        self.index.insert(token.to_string(), id);
        self.tokens.push(token.to_string());
        self.counts.push(1);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Occurrences after truncation; the reserved token starts at 1.
    pub fn count(&self, id: usize) -> usize {
        self.counts[id]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextSequence {
    pub vertex: usize,
    pub token_ids: Vec<usize>,
}

impl TextSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// One token sequence per vertex, indexed by vertex id.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub vocab: Vocabulary,
    sequences: Vec<TextSequence>,
    max_len: usize,
}

impl Corpus {
    /// Builds a corpus from raw per-vertex texts (index = vertex id).
    pub fn from_texts<S: AsRef<str>>(texts: &[S], max_len: usize) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::Invalid("max_len must be at least 1".into()));
        }
        let mut vocab = Vocabulary::new();
        let sequences = texts
            .iter()
            .enumerate()
            .map(|(vertex, raw)| {
                let mut token_ids: Vec<usize> = tokenize(raw.as_ref())
                    .iter()
                    .take(max_len)
                    .map(|t| vocab.intern(t))
                    .collect();
                if token_ids.is_empty() {
                    vocab.counts[0] += 1;
                    token_ids.push(0);
                }
                TextSequence { vertex, token_ids }
            })
            .collect();
        Ok(Self {
            vocab,
            sequences,
            max_len,
        })
    }

    /// Parses `vertex_id<TAB>text` lines; every id in `0..num_vertices` must
    /// appear exactly once.
    pub fn from_reader(
        reader: impl Read,
        source_name: &str,
        num_vertices: usize,
        max_len: usize,
    ) -> Result<Self> {
        let mut texts: Vec<Option<String>> = vec![None; num_vertices];
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let (id, text) = line.split_once('\t').unwrap_or((line.as_str(), ""));
            let id: usize = id.trim().parse().map_err(|_| {
                Error::parse(source_name, lineno, format!("bad vertex id `{id}`"))
            })?;
            let slot = texts.get_mut(id).ok_or_else(|| {
                Error::Corpus(format!(
                    "{source_name}:{lineno}: vertex {id} outside graph range 0..{num_vertices}"
                ))
            })?;
            if slot.is_some() {
                return Err(Error::Corpus(format!(
                    "{source_name}:{lineno}: duplicate text for vertex {id}"
                )));
            }
            *slot = Some(text.to_string());
        }
        if let Some(missing) = texts.iter().position(Option::is_none) {
            return Err(Error::Corpus(format!(
                "{source_name}: no text for vertex {missing}"
            )));
        }
        let texts: Vec<String> = texts.into_iter().map(Option::unwrap_or_default).collect();
        Self::from_texts(&texts, max_len)
    }

    pub fn num_vertices(&self) -> usize {
        self.sequences.len()
    }

    pub fn sequence(&self, vertex: usize) -> &TextSequence {
        &self.sequences[vertex]
    }

    pub fn sequences(&self) -> &[TextSequence] {
        &self.sequences
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn mean_length(&self) -> f64 {
        let total: usize = self.sequences.iter().map(TextSequence::len).sum();
        total as f64 / self.sequences.len().max(1) as f64
    }
}

/// Reads the text file and returns the corpus over `num_vertices` vertices.
pub fn build_corpus(path: impl AsRef<Path>, num_vertices: usize, max_len: usize) -> Result<Corpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_reader(file, &path.display().to_string(), num_vertices, max_len)
}

/// Number of lines carrying a vertex id, i.e. the vertex count of a text file.
pub fn count_text_vertices(path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut max_id = None::<usize>;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let id = line.split('\t').next().unwrap_or("").trim();
        let id: usize = id.parse().map_err(|_| {
            Error::parse(path.display().to_string(), idx + 1, format!("bad vertex id `{id}`"))
        })?;
        max_id = Some(max_id.map_or(id, |m| m.max(id)));
    }
    Ok(max_id.map_or(0, |m| m + 1))
}

/// Class labels per vertex, with the class names in first-seen order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labels {
    pub names: Vec<String>,
    pub classes: Vec<usize>,
}

impl Labels {
    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn from_reader(reader: impl Read, source_name: &str, num_vertices: usize) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut lookup: HashMap<String, usize> = HashMap::new();
        let mut classes: Vec<Option<usize>> = vec![None; num_vertices];
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let (id, label) = line.split_once('\t').ok_or_else(|| {
                Error::parse(source_name, lineno, "expected `vertex_id<TAB>label`")
            })?;
            let id: usize = id.trim().parse().map_err(|_| {
                Error::parse(source_name, lineno, format!("bad vertex id `{id}`"))
            })?;
            let label = label.trim().to_string();
            let next = names.len();
            let class = *lookup.entry(label.clone()).or_insert_with(|| {
                names.push(label);
                next
            });
            match classes.get_mut(id) {
                Some(slot @ None) => *slot = Some(class),
                Some(Some(_)) => {
                    return Err(Error::parse(source_name, lineno, format!("duplicate label for {id}")))
                }
                None => {
                    return Err(Error::parse(
                        source_name,
                        lineno,
                        format!("vertex {id} outside range 0..{num_vertices}"),
                    ))
                }
            }
        }
        let classes = classes
            .into_iter()
            .enumerate()
            .map(|(v, c)| c.ok_or_else(|| Error::Corpus(format!("{source_name}: no label for vertex {v}"))))
            .collect::<Result<_>>()?;
        Ok(Self { names, classes })
    }
}

pub fn load_labels(path: impl AsRef<Path>, num_vertices: usize) -> Result<Labels> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Labels::from_reader(file, &path.display().to_string(), num_vertices)
}
