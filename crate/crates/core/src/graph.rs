//! Undirected weighted networks: loading, train/test edge splits and the two
//! samplers the trainer draws from (positive edges by weight, negative
//! vertices by `degree^0.75`).

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Largest accepted vertex id.
pub const MAX_VERTEX_ID: u64 = u32::MAX as u64 - 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

impl Edge {
    pub fn new(u: usize, v: usize, weight: f64) -> Self {
        Self { u, v, weight }
    }

    fn key(&self) -> (usize, usize) {
        canonical(self.u, self.v)
    }
}

fn canonical(u: usize, v: usize) -> (usize, usize) {
    if u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Immutable undirected graph with symmetric adjacency and weighted degrees.
#[derive(Clone, Debug)]
pub struct Graph {
    num_vertices: usize,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, f64)>>,
    degrees: Vec<f64>,
    edge_set: HashSet<(usize, usize)>,
}

impl Graph {
    /// Validates and indexes an edge list over vertices `0..num_vertices`.
    pub fn from_edges(num_vertices: usize, edges: Vec<Edge>) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); num_vertices];
        let mut degrees = vec![0.0; num_vertices];
        let mut edge_set = HashSet::with_capacity(edges.len());
        for e in &edges {
            if e.u >= num_vertices || e.v >= num_vertices {
                return Err(Error::Graph(format!(
                    "edge ({}, {}) outside vertex range 0..{num_vertices}",
                    e.u, e.v
                )));
            }
            if e.u == e.v {
                return Err(Error::Graph(format!("self-loop on vertex {}", e.u)));
            }
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return Err(Error::Graph(format!(
                    "edge ({}, {}) has non-positive weight {}",
                    e.u, e.v, e.weight
                )));
            }
            if !edge_set.insert(e.key()) {
                return Err(Error::Graph(format!(
                    "duplicate undirected edge ({}, {})",
                    e.u, e.v
                )));
            }
            adjacency[e.u].push((e.v, e.weight));
            adjacency[e.v].push((e.u, e.weight));
            degrees[e.u] += e.weight;
            degrees[e.v] += e.weight;
        }
        Ok(Self {
            num_vertices,
            edges,
            adjacency,
            degrees,
            edge_set,
        })
    }

    /// Parses `src<TAB>dst[<TAB>weight]` lines. Blank lines and `#` comments
    /// are skipped. The vertex count is the largest id plus one.
    pub fn from_reader(reader: impl Read, source_name: &str) -> Result<Self> {
        let mut edges = Vec::new();
        let mut seen = HashSet::new();
        let mut max_id: Option<usize> = None;
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if !(2..=3).contains(&fields.len()) {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("expected `src dst [weight]`, got {} fields", fields.len()),
                ));
            }
            let u = parse_vertex(fields[0], source_name, lineno)?;
            let v = parse_vertex(fields[1], source_name, lineno)?;
            let weight = match fields.get(2) {
                Some(w) => w.parse::<f64>().map_err(|_| {
                    Error::parse(source_name, lineno, format!("bad weight `{w}`"))
                })?,
                None => 1.0,
            };
            if !(weight > 0.0 && weight.is_finite()) {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("weight must be positive, got {weight}"),
                ));
            }
            if u == v {
                return Err(Error::parse(source_name, lineno, format!("self-loop on {u}")));
            }
            if !seen.insert(canonical(u, v)) {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("duplicate undirected edge ({u}, {v})"),
                ));
            }
            max_id = Some(max_id.unwrap_or(0).max(u).max(v));
            edges.push(Edge::new(u, v, weight));
        }
        Self::from_edges(max_id.map_or(0, |m| m + 1), edges)
    }

    /// Returns a copy over `num_vertices >= self.num_vertices()` vertices;
    /// the extra vertices are isolated.
    pub fn with_num_vertices(&self, num_vertices: usize) -> Result<Self> {
        if num_vertices < self.num_vertices {
            return Err(Error::Graph(format!(
                "cannot shrink a {}-vertex graph to {num_vertices}",
                self.num_vertices
            )));
        }
        Self::from_edges(num_vertices, self.edges.clone())
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adjacency[v]
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edge_set.contains(&canonical(u, v))
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        self.adjacency
            .get(u)?
            .iter()
            .find(|(n, _)| *n == v)
            .map(|&(_, w)| w)
    }
}

fn parse_vertex(field: &str, source_name: &str, line: usize) -> Result<usize> {
    if !field.is_empty() && field.bytes().all(|b| b.is_ascii_digit()) {
        match field.parse::<u64>() {
            Ok(id) if id <= MAX_VERTEX_ID => return Ok(id as usize),
            _ => {
                return Err(Error::parse(
                    source_name,
                    line,
                    format!("vertex id `{field}` overflows"),
                ))
            }
        }
    }
    Err(Error::parse(source_name, line, format!("bad vertex id `{field}`")))
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Graph::from_reader(file, &path.display().to_string())
}

/// Training graph plus held-out positive and sampled negative vertex pairs.
#[derive(Clone, Debug)]
pub struct EdgeSplit {
    pub train: Graph,
    pub test_pos: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
    pub ratio: f64,
    pub seed: u64,
}

/// Keeps `round(ratio * |E|)` edges for training and holds out the rest as
/// positives, pairing them with as many uniformly drawn non-edges.
///
/// The train graph keeps every vertex even when the split isolates it.
pub fn split_edges(g: &Graph, ratio: f64, seed: u64) -> Result<EdgeSplit> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Invalid(format!("split ratio {ratio} not in (0, 1]")));
    }
    let total = g.num_edges();
    let n_train = ((ratio * total as f64).round() as usize).min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let train_edges = train_idx.iter().map(|&i| g.edges[i]).collect();
    let train = Graph::from_edges(g.num_vertices(), train_edges)?;
    let test_pos: Vec<(usize, usize)> = test_idx
        .iter()
        .map(|&i| (g.edges[i].u, g.edges[i].v))
        .collect();

    let n = g.num_vertices() as u128;
    let non_edges = n * n.saturating_sub(1) / 2 - total as u128;
    if (test_pos.len() as u128) > non_edges {
        return Err(Error::Graph(format!(
            "need {} negative pairs but only {non_edges} non-edges exist",
            test_pos.len()
        )));
    }
    let mut chosen = HashSet::with_capacity(test_pos.len());
    let mut test_neg = Vec::with_capacity(test_pos.len());
    while test_neg.len() < test_pos.len() {
        let u = rng.random_range(0..g.num_vertices());
        let v = rng.random_range(0..g.num_vertices());
        if u == v || g.has_edge(u, v) || !chosen.insert(canonical(u, v)) {
            continue;
        }
        test_neg.push((u, v));
    }
    Ok(EdgeSplit {
        train,
        test_pos,
        test_neg,
        ratio,
        seed,
    })
}

impl EdgeSplit {
    /// Canonical text form; also the input of [`EdgeSplit::fingerprint`].
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        s.push_str("# wane edge split\n");
        let _ = writeln!(s, "num_vertices\t{}", self.train.num_vertices());
        let _ = writeln!(s, "ratio\t{}", self.ratio);
        let _ = writeln!(s, "seed\t{}", self.seed);
        for e in self.train.edges() {
            let _ = writeln!(s, "train\t{}\t{}\t{}", e.u, e.v, e.weight);
        }
        for (u, v) in &self.test_pos {
            let _ = writeln!(s, "test_pos\t{u}\t{v}");
        }
        for (u, v) in &self.test_neg {
            let _ = writeln!(s, "test_neg\t{u}\t{v}");
        }
        s
    }

    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_tsv().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_tsv(text: &str, source_name: &str) -> Result<Self> {
        let mut num_vertices = None;
        let mut ratio = None;
        let mut seed = None;
        let mut train = Vec::new();
        let mut test_pos = Vec::new();
        let mut test_neg = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || Error::parse(source_name, lineno, format!("malformed line `{line}`"));
            let vertex = |s: &str| parse_vertex(s, source_name, lineno);
            match (f[0], f.len()) {
                ("num_vertices", 2) => num_vertices = Some(f[1].parse::<usize>().map_err(|_| bad())?),
                ("ratio", 2) => ratio = Some(f[1].parse::<f64>().map_err(|_| bad())?),
                ("seed", 2) => seed = Some(f[1].parse::<u64>().map_err(|_| bad())?),
                ("train", 4) => train.push(Edge::new(
                    vertex(f[1])?,
                    vertex(f[2])?,
                    f[3].parse().map_err(|_| bad())?,
                )),
                ("test_pos", 3) => test_pos.push((vertex(f[1])?, vertex(f[2])?)),
                ("test_neg", 3) => test_neg.push((vertex(f[1])?, vertex(f[2])?)),
                _ => return Err(bad()),
            }
        }
        let missing = |what: &str| Error::parse(source_name, 0, format!("missing `{what}` header"));
        Ok(Self {
            train: Graph::from_edges(num_vertices.ok_or_else(|| missing("num_vertices"))?, train)?,
            test_pos,
            test_neg,
            ratio: ratio.ok_or_else(|| missing("ratio"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
        })
    }
}

/// Walker/Vose alias table: O(n) construction, O(1) draws.
#[derive(Clone, Debug)]
pub struct AliasTable {
    probabilities: Vec<f64>,
    threshold: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    pub fn new(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Invalid("alias weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Invalid("alias weights sum to zero".into()));
        }
        let n = weights.len();
        let probabilities: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut threshold: Vec<f64> = probabilities.iter().map(|p| p * n as f64).collect();
        let mut alias: Vec<usize> = (0..n).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| threshold[i] < 1.0);
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            alias[s] = l;
            threshold[l] -= 1.0 - threshold[s];
            if threshold[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers are 1 up to rounding.
        for i in small.into_iter().chain(large) {
            threshold[i] = 1.0;
        }
        Ok(Self {
            probabilities,
            threshold,
            alias,
        })
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn probability(&self, i: usize) -> f64 {
        self.probabilities[i]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let i = rng.random_range(0..self.threshold.len());
        if rng.random::<f64>() < self.threshold[i] {
            i
        } else {
            self.alias[i]
        }
    }
}

/// Noise distribution over vertices, `P(v) ∝ d_v^{3/4}`.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    table: AliasTable,
}

pub fn build_negative_sampler(g: &Graph) -> Result<NegativeSampler> {
    NegativeSampler::from_degrees(g.degrees())
}

impl NegativeSampler {
    pub fn from_degrees(degrees: &[f64]) -> Result<Self> {
        if !degrees.iter().any(|&d| d > 0.0) {
            return Err(Error::Graph("every vertex has zero degree".into()));
        }
        let weights: Vec<f64> = degrees.iter().map(|d| d.powf(0.75)).collect();
        Ok(Self {
            table: AliasTable::new(&weights)?,
        })
    }

    pub fn probability(&self, v: usize) -> f64 {
        self.table.probability(v)
    }

    pub fn probabilities(&self) -> &[f64] {
        self.table.probabilities()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.table.sample(rng)
    }

    /// Draws until the vertex is not in `exclude`.
    pub fn sample_excluding<R: Rng + ?Sized>(&self, rng: &mut R, exclude: &[usize]) -> Result<usize> {
        let excluded_mass: f64 = exclude
            .iter()
            .copied()
            .collect::<HashSet<_>>()
            .into_iter()
            .map(|v| self.table.probability(v))
            .sum();
        if excluded_mass >= 1.0 - 1e-12 {
            return Err(Error::Graph(
                "no vertex outside the excluded set has positive noise probability".into(),
            ));
        }
        loop {
            let v = self.table.sample(rng);
            if !exclude.contains(&v) {
                return Ok(v);
            }
        }
    }
}

/// Draws edges i.i.d. with probability proportional to weight.
#[derive(Clone, Debug)]
pub struct EdgeSampler {
    table: AliasTable,
}

impl EdgeSampler {
    pub fn new(g: &Graph) -> Result<Self> {
        if g.num_edges() == 0 {
            return Err(Error::Graph("cannot sample from an empty edge set".into()));
        }
        let weights: Vec<f64> = g.edges().iter().map(|e| e.weight).collect();
        Ok(Self {
            table: AliasTable::new(&weights)?,
        })
    }

    /// Returns edge indices into `g.edges()`.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<usize> {
        (0..batch_size).map(|_| self.table.sample(rng)).collect()
    }
}

pub fn sample_edge_batch<R: Rng + ?Sized>(g: &Graph, batch_size: usize, rng: &mut R) -> Result<Vec<Edge>> {
    let sampler = EdgeSampler::new(g)?;
    Ok(sampler
        .sample_indices(batch_size, rng)
        .into_iter()
        .map(|i| g.edges()[i])
        .collect())
}
