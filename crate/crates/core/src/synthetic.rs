//! Seeded generator for labelled citation-style networks with text.
//!
//! Every vertex belongs to a class and to one subtopic of that class. Its
//! text mixes Zipf-distributed general vocabulary with class, subtopic and
//! off-topic words; its edges prefer partners from the same subtopic, then
//! the same class, and within each pool favor high-fitness (heavy-tailed)
//! vertices. The defaults mirror the public statistics of the Cora citation
//! network used for text-aware embedding: 2277 vertices, 5214 edges, seven
//! classes in Cora's proportions and roughly 80% label-homophilous edges.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{AliasTable, Edge, Graph};
use crate::text::{Corpus, Labels};

/// Cora's class names and sizes (out of 2708 papers).
pub const CORA_CLASSES: [(&str, usize); 7] = [
    ("case_based", 298),
    ("genetic_algorithms", 418),
    ("neural_networks", 818),
    ("probabilistic_methods", 426),
    ("reinforcement_learning", 217),
    ("rule_learning", 180),
    ("theory", 351),
];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub num_vertices: usize,
    pub num_edges: usize,
    /// Relative class sizes.
    pub class_weights: Vec<f64>,
    pub subtopics_per_class: usize,
    /// Inclusive range of text lengths in words.
    pub text_len: (usize, usize),
    pub general_vocab: usize,
    pub class_vocab: usize,
    pub subtopic_vocab: usize,
    /// Probabilities of drawing a word from the general, own-class,
    /// own-subtopic and random other-class pools.
    pub word_mix: [f64; 4],
    /// Probabilities of picking an edge partner from the same subtopic, the
    /// same class (other subtopics) or anywhere.
    pub edge_mix: [f64; 3],
    /// Pareto shape of vertex fitness; smaller is more skewed.
    pub fitness_shape: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    /// Cora-sized defaults.
    pub fn cora_like(seed: u64) -> Self {
        Self {
            num_vertices: 2277,
            num_edges: 5214,
            class_weights: CORA_CLASSES.iter().map(|&(_, n)| n as f64).collect(),
            subtopics_per_class: 10,
            text_len: (40, 140),
            general_vocab: 2000,
            class_vocab: 120,
            subtopic_vocab: 25,
            word_mix: [0.5, 0.25, 0.15, 0.10],
            edge_mix: [0.55, 0.24, 0.21],
            fitness_shape: 2.5,
            seed,
        }
    }

    /// A small instance for examples and fast tests.
    pub fn small(seed: u64) -> Self {
        Self {
            num_vertices: 120,
            num_edges: 300,
            class_weights: vec![1.0; 3],
            subtopics_per_class: 2,
            text_len: (8, 20),
            general_vocab: 150,
            class_vocab: 20,
            subtopic_vocab: 8,
            ..Self::cora_like(seed)
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic generator: {m}")));
        if self.num_vertices < 2 || self.class_weights.is_empty() || self.subtopics_per_class == 0 {
            return bad("need at least two vertices, one class and one subtopic");
        }
        let n = self.num_vertices as u128;
        if self.num_edges as u128 > n * (n - 1) / 2 || self.num_edges < self.num_vertices / 2 {
            return bad("edge count cannot cover every vertex or exceeds the complete graph");
        }
        if self.text_len.0 == 0 || self.text_len.0 > self.text_len.1 {
            return bad("text length range must be non-empty and positive");
        }
        if self.general_vocab == 0 || self.class_vocab == 0 || self.subtopic_vocab == 0 {
            return bad("vocabulary pools must be non-empty");
        }
        if !(self.fitness_shape > 0.0) {
            return bad("fitness shape must be positive");
        }
        Ok(())
    }
}

/// A generated network with ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticNetwork {
    pub graph: Graph,
    pub texts: Vec<String>,
    pub class_names: Vec<String>,
    pub classes: Vec<usize>,
    /// Global subtopic index per vertex.
    pub subtopics: Vec<usize>,
}

impl SyntheticNetwork {
    pub fn to_dataset(&self, name: &str, max_len: usize) -> Result<Dataset> {
        Ok(Dataset {
            name: name.to_string(),
            graph: self.graph.clone(),
            corpus: Corpus::from_texts(&self.texts, max_len)?,
            labels: Some(Labels {
                names: self.class_names.clone(),
                classes: self.classes.clone(),
            }),
        })
    }
}

/// Distinct pronounceable token for every index.
fn pseudo_word(mut k: usize) -> String {
    const ONSETS: [&str; 20] = [
        "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z", "br", "st",
    ];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let mut s = String::new();
    // At least two syllables; the leading syllable count is implied by the
    // index so every index maps to a different string.
    for _ in 0..2 {
        let syl = k % 100;
        k /= 100;
        s.insert_str(0, VOWELS[syl % 5]);
        s.insert_str(0, ONSETS[syl / 5]);
    }
    while k > 0 {
        k -= 1;
        let syl = k % 100;
        k /= 100;
        s.insert_str(0, VOWELS[syl % 5]);
        s.insert_str(0, ONSETS[syl / 5]);
    }
    s
}

fn zipf(n: usize) -> AliasTable {
    let w: Vec<f64> = (1..=n).map(|r| 1.0 / (r as f64).powf(1.1)).collect();
    AliasTable::new(&w).expect("positive weights")
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticNetwork> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.num_vertices;
    let c = config.class_weights.len();
    let per = config.subtopics_per_class;

    // Class sizes by largest remainder, then vertices in shuffled order.
    let total: f64 = config.class_weights.iter().sum();
    let exact: Vec<f64> = config.class_weights.iter().map(|w| w / total * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut by_remainder: Vec<usize> = (0..c).collect();
    by_remainder.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &k in by_remainder.iter().cycle().take(n - sizes.iter().sum::<usize>()) {
        sizes[k] += 1;
    }
    let mut classes: Vec<usize> = sizes.iter().enumerate().flat_map(|(k, &s)| std::iter::repeat_n(k, s)).collect();
    classes.shuffle(&mut rng);
    let subtopics: Vec<usize> = classes.iter().map(|&k| k * per + rng.random_range(0..per)).collect();

    // Vocabulary pools are disjoint index ranges.
    let class_base = config.general_vocab;
    let sub_base = class_base + c * config.class_vocab;
    let general = zipf(config.general_vocab);
    let class_words = zipf(config.class_vocab);
    let sub_words = zipf(config.subtopic_vocab);
    let word_mix = AliasTable::new(&config.word_mix)?;
    let texts: Vec<String> = (0..n)
        .map(|v| {
            let len = rng.random_range(config.text_len.0..=config.text_len.1);
            let words: Vec<String> = (0..len)
                .map(|_| {
                    let idx = match word_mix.sample(&mut rng) {
                        0 => general.sample(&mut rng),
                        1 => class_base + classes[v] * config.class_vocab + class_words.sample(&mut rng),
                        2 => sub_base + subtopics[v] * config.subtopic_vocab + sub_words.sample(&mut rng),
                        _ => {
                            let other = rng.random_range(0..c);
                            class_base + other * config.class_vocab + class_words.sample(&mut rng)
                        }
                    };
                    pseudo_word(idx)
                })
                .collect();
            words.join(" ")
        })
        .collect();

    // Heavy-tailed fitness decides who gets cited.
    let fitness: Vec<f64> = (0..n)
        .map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / config.fitness_shape))
        .collect();
    let mut by_sub: Vec<Vec<usize>> = vec![Vec::new(); c * per];
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for v in 0..n {
        by_sub[subtopics[v]].push(v);
        by_class[classes[v]].push(v);
    }
    let table = |pool: &[usize]| AliasTable::new(&pool.iter().map(|&v| fitness[v]).collect::<Vec<_>>());
    let sub_tables = by_sub
        .iter()
        .map(|p| if p.is_empty() { Ok(None) } else { table(p).map(Some) })
        .collect::<Result<Vec<_>>>()?;
    let class_tables = by_class
        .iter()
        .map(|p| if p.is_empty() { Ok(None) } else { table(p).map(Some) })
        .collect::<Result<Vec<_>>>()?;
    let everyone: Vec<usize> = (0..n).collect();
    let global_table = table(&everyone)?;
    let edge_mix = AliasTable::new(&config.edge_mix)?;
    let partner = |u: usize, rng: &mut ChaCha8Rng| -> usize {
        match edge_mix.sample(rng) {
            0 => match &sub_tables[subtopics[u]] {
                Some(t) => by_sub[subtopics[u]][t.sample(rng)],
                None => global_table.sample(rng),
            },
            1 => match &class_tables[classes[u]] {
                Some(t) => by_class[classes[u]][t.sample(rng)],
                None => global_table.sample(rng),
            },
            _ => global_table.sample(rng),
        }
    };

    let mut seen = std::collections::HashSet::new();
    let mut edges = Vec::with_capacity(config.num_edges);
    let mut degree = vec![0usize; n];
    let mut add = |u: usize, v: usize, edges: &mut Vec<Edge>| -> bool {
        if u == v || !seen.insert((u.min(v), u.max(v))) {
            return false;
        }
        degree[u] += 1;
        degree[v] += 1;
        edges.push(Edge::new(u, v, 1.0));
        true
    };
    // Every vertex cites at least once; then citing vertices are uniform.
    let mut order = everyone.clone();
    order.shuffle(&mut rng);
    let attempts_cap = 1000 * config.num_edges.max(n);
    let mut attempts = 0;
    for &u in &order {
        while edges.len() < config.num_edges {
            let v = partner(u, &mut rng);
            attempts += 1;
            if add(u, v, &mut edges) || attempts > attempts_cap {
                break;
            }
        }
    }
    while edges.len() < config.num_edges {
        let u = rng.random_range(0..n);
        let v = partner(u, &mut rng);
        add(u, v, &mut edges);
        attempts += 1;
        if attempts > attempts_cap {
            return Err(Error::Config("synthetic generator could not place all edges".into()));
        }
    }
    let graph = Graph::from_edges(n, edges)?;
    let class_names = (0..c)
        .map(|k| match (c == CORA_CLASSES.len(), CORA_CLASSES.get(k)) {
            (true, Some(&(name, _))) => name.to_string(),
            _ => format!("class_{k}"),
        })
        .collect();
    Ok(SyntheticNetwork {
        graph,
        texts,
        class_names,
        classes,
        subtopics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn pseudo_words_are_distinct() {
        let words: HashSet<String> = (0..30_000).map(pseudo_word).collect();
        assert_eq!(words.len(), 30_000);
        assert!(words.iter().all(|w| w.chars().all(|ch| ch.is_ascii_lowercase())));
    }

    #[test]
    fn cora_like_shape() {
        let net = generate(&SyntheticConfig::cora_like(1)).unwrap();
        assert_eq!(net.graph.num_vertices(), 2277);
        assert_eq!(net.graph.num_edges(), 5214);
        assert!(net.graph.degrees().iter().all(|&d| d >= 1.0));
        let counts: Vec<usize> = (0..7).map(|k| net.classes.iter().filter(|&&c| c == k).count()).collect();
        assert_eq!(counts.iter().sum::<usize>(), 2277);
        // Largest class matches Cora's share: 818 / 2708 of 2277.
        assert_eq!(counts[2], (818.0f64 * 2277.0 / 2708.0).round() as usize);
        let same = net
            .graph
            .edges()
            .iter()
            .filter(|e| net.classes[e.u] == net.classes[e.v])
            .count() as f64
            / 5214.0;
        assert!((0.75..0.9).contains(&same), "homophily {same}");
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate(&SyntheticConfig::small(4)).unwrap();
        let b = generate(&SyntheticConfig::small(4)).unwrap();
        let c = generate(&SyntheticConfig::small(5)).unwrap();
        assert_eq!(a.texts, b.texts);
        assert_eq!(a.graph.edges(), b.graph.edges());
        assert_ne!(a.texts, c.texts);
    }
}
