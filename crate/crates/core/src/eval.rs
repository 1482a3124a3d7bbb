//! Link-prediction AUC, vertex classification on global embeddings, and
//! inspection exports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{EdgeSplit, Graph};
use crate::kernel::{dot, gemm, Matrix, Trans};
use crate::model::{pair_embedding, text_embed_ww, text_embedding, Mode, ModelParams};
use crate::text::Corpus;

/// Inner product of the context-aware embeddings of `i` and `j`:
/// `s_i.s_j + t_{i|j}.t_{j|i}`. Models trained without any textual loss
/// term are scored on the structural part alone.
pub fn pair_score(params: &ModelParams, corpus: &Corpus, i: usize, j: usize) -> Result<f64> {
    // A fixed evaluation order makes the score exactly symmetric.
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    if !params.config.uses_text() {
        let n = params.num_vertices();
        if a >= n || b >= n {
            return Err(Error::Invalid(format!("vertex outside 0..{n}")));
        }
        return Ok(dot(params.structural.row(a), params.structural.row(b)));
    }
    let p = pair_embedding(params, corpus, a, b)?;
    Ok(dot(&p.h_s_i, &p.h_s_j) + dot(&p.h_t_i, &p.h_t_j))
}

/// Scores every pair, in parallel when a pool is available.
pub fn score_pairs(params: &ModelParams, corpus: &Corpus, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    pairs.par_iter().map(|&(u, v)| pair_score(params, corpus, u, v)).collect()
}

/// Exact Mann-Whitney AUC: the fraction of (positive, negative) pairs in
/// which the positive scores higher, ties counting one half. Sort based,
/// `O((P + Q) log(P + Q))`; the pair count is accumulated in integers so the
/// result equals brute-force counting exactly.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Invalid("AUC needs at least one positive and one negative".into()));
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        return Err(Error::Invalid("AUC scores contain NaN".into()));
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the winning pair count: 2 per strict win, 1 per tie.
    let mut twice: u128 = 0;
    let mut negs_below: u128 = 0;
    let mut k = 0;
    while k < all.len() {
        let mut end = k;
        let (mut p, mut q) = (0u128, 0u128);
        // -0.0 and 0.0 compare equal as scores.
        while end < all.len() && all[end].0 == all[k].0 {
            if all[end].1 {
                p += 1;
            } else {
                q += 1;
            }
            end += 1;
        }
        twice += p * (2 * negs_below + q);
        negs_below += q;
        k = end;
    }
    Ok(twice as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64)
}

/// AUC of the held-out edges against the sampled non-edges.
pub fn link_prediction_auc(params: &ModelParams, corpus: &Corpus, split: &EdgeSplit) -> Result<f64> {
    if split.test_pos.is_empty() || split.test_neg.is_empty() {
        return Err(Error::Invalid("split has an empty test set".into()));
    }
    let pos = score_pairs(params, corpus, &split.test_pos)?;
    let neg = score_pairs(params, corpus, &split.test_neg)?;
    auc(&pos, &neg)
}

/// `h_s^v` followed by the mean of `t_{v|u}` over the neighbors `u` of `v`.
/// An isolated vertex uses its own text as context. Without textual loss
/// terms only the structural part is returned.
pub fn global_embedding(params: &ModelParams, corpus: &Corpus, graph: &Graph, v: usize) -> Result<Vec<f64>> {
    if v >= params.num_vertices() || v >= graph.num_vertices() {
        return Err(Error::Invalid(format!("vertex {v} out of range")));
    }
    let mut h = params.structural.row(v).to_vec();
    if !params.config.uses_text() {
        return Ok(h);
    }
    let neighbors = graph.neighbors(v);
    if neighbors.is_empty() {
        h.extend(text_embedding(params, corpus, v, v)?);
        return Ok(h);
    }
    let mut mean = vec![0.0; params.config.text_dim()];
    for &(u, _) in neighbors {
        let t = text_embedding(params, corpus, v, u)?;
        for (m, x) in mean.iter_mut().zip(&t) {
            *m += x;
        }
    }
    let inv = 1.0 / neighbors.len() as f64;
    h.extend(mean.iter().map(|m| m * inv));
    Ok(h)
}

/// Global embeddings of every vertex, one row each.
pub fn global_embeddings(params: &ModelParams, corpus: &Corpus, graph: &Graph) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = (0..graph.num_vertices())
        .into_par_iter()
        .map(|v| global_embedding(params, corpus, graph, v))
        .collect::<Result<_>>()?;
    Matrix::from_rows(&rows)
}

/// Hyperparameters of the one-vs-rest hinge classifier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            learning_rate: 0.5,
            l2: 1e-4,
        }
    }
}

/// One linear scorer per class over standardized features.
#[derive(Clone, Debug)]
pub struct LinearClassifier {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    /// `C x d`.
    weights: Matrix,
    bias: Vec<f64>,
}

impl LinearClassifier {
    /// Full-batch subgradient descent on `l2/2 |w|^2 + mean(max(0, 1 - y w.x))`
    /// for each class against the rest. The bias is not regularized.
    pub fn fit(x: &Matrix, y: &[usize], num_classes: usize, config: ClassifierConfig) -> Result<Self> {
        let (n, d) = x.shape();
        if n != y.len() || n == 0 {
            return Err(Error::Invalid(format!("{n} rows but {} labels", y.len())));
        }
        if let Some(&c) = y.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Invalid(format!("label {c} outside 0..{num_classes}")));
        }
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v / n as f64;
            }
        }
        let mut var = vec![0.0; d];
        for r in 0..n {
            for k in 0..d {
                var[k] += (x.get(r, k) - mean[k]).powi(2) / n as f64;
            }
        }
        let inv_std = var.iter().map(|v| if *v > 1e-24 { 1.0 / v.sqrt() } else { 0.0 }).collect();
        let mut model = Self {
            mean,
            inv_std,
            weights: Matrix::zeros(num_classes, d),
            bias: vec![0.0; num_classes],
        };
        let z = model.standardize(x);
        let mut scores = Matrix::zeros(n, num_classes);
        let mut coef = Matrix::zeros(n, num_classes);
        let mut grad = Matrix::zeros(num_classes, d);
        for t in 1..=config.iterations {
            model.raw_scores(&z, &mut scores);
            // coef[r][c] = -y / n where the margin is violated.
            for r in 0..n {
                for c in 0..num_classes {
                    let sign = if y[r] == c { 1.0 } else { -1.0 };
                    let v = if sign * scores.get(r, c) < 1.0 { -sign / n as f64 } else { 0.0 };
                    coef.set(r, c, v);
                }
            }
            gemm(1.0, &coef, Trans::Yes, &z, Trans::No, 0.0, &mut grad).expect("shapes agree");
            let lr = config.learning_rate / (t as f64).sqrt();
            for c in 0..num_classes {
                let gb: f64 = (0..n).map(|r| coef.get(r, c)).sum();
                model.bias[c] -= lr * gb;
                for k in 0..d {
                    let w = model.weights.get(c, k);
                    model.weights.set(c, k, w - lr * (grad.get(c, k) + config.l2 * w));
                }
            }
        }
        Ok(model)
    }

    fn standardize(&self, x: &Matrix) -> Matrix {
        let mut z = x.clone();
        for r in 0..z.rows() {
            for (k, v) in z.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[k]) * self.inv_std[k];
            }
        }
        z
    }

    fn raw_scores(&self, z: &Matrix, out: &mut Matrix) {
        gemm(1.0, z, Trans::No, &self.weights, Trans::Yes, 0.0, out).expect("shapes agree");
        for r in 0..out.rows() {
            for (s, b) in out.row_mut(r).iter_mut().zip(&self.bias) {
                *s += b;
            }
        }
    }

    /// Highest-scoring class per row; ties go to the lower class index.
    pub fn predict(&self, x: &Matrix) -> Vec<usize> {
        let z = self.standardize(x);
        let mut scores = Matrix::zeros(z.rows(), self.bias.len());
        self.raw_scores(&z, &mut scores);
        (0..scores.rows())
            .map(|r| {
                let row = scores.row(r);
                (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationResult {
    pub mean_accuracy: f64,
    pub accuracies: Vec<f64>,
}

/// Accuracy of the one-vs-rest classifier averaged over `repeats` random
/// splits with `train_ratio` of the vertices for training. A split whose
/// training part misses a class is redrawn.
pub fn classify(
    embeddings: &Matrix,
    labels: &[usize],
    train_ratio: f64,
    repeats: usize,
    seed: u64,
    config: ClassifierConfig,
) -> Result<ClassificationResult> {
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(Error::Invalid(format!("{n} embeddings but {} labels", labels.len())));
    }
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::Invalid(format!("train ratio {train_ratio} not in (0, 1)")));
    }
    if repeats == 0 {
        return Err(Error::Invalid("at least one repeat is required".into()));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let n_train = ((n as f64) * train_ratio).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Invalid(format!("train ratio {train_ratio} leaves an empty side of {n} vertices")));
    }
    let present: Vec<bool> = (0..num_classes).map(|c| labels.contains(&c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accuracies = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let mut order: Vec<usize> = (0..n).collect();
        let mut attempts = 0;
        loop {
            order.shuffle(&mut rng);
            let mut seen = vec![false; num_classes];
            order[..n_train].iter().for_each(|&v| seen[labels[v]] = true);
            if seen == present {
                break;
            }
            attempts += 1;
            if attempts == 1000 {
                return Err(Error::Invalid("could not draw a split with every class in training".into()));
            }
        }
        let (train, test) = order.split_at(n_train);
        let pick = |idx: &[usize]| -> Result<Matrix> {
            let rows: Vec<Vec<f64>> = idx.iter().map(|&v| embeddings.row(v).to_vec()).collect();
            Matrix::from_rows(&rows)
        };
        let y: Vec<usize> = train.iter().map(|&v| labels[v]).collect();
        let model = LinearClassifier::fit(&pick(train)?, &y, num_classes, config)?;
        let predicted = model.predict(&pick(test)?);
        let correct = test.iter().zip(&predicted).filter(|(&v, &p)| labels[v] == p).count();
        accuracies.push(correct as f64 / test.len() as f64);
    }
    let mean_accuracy = accuracies.iter().sum::<f64>() / repeats as f64;
    Ok(ClassificationResult { mean_accuracy, accuracies })
}

/// TSV with header `vertex_id v1 .. vD`. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn embeddings_tsv(embeddings: &Matrix) -> String {
    let mut s = String::from("vertex_id");
    for k in 1..=embeddings.cols() {
        let _ = write!(s, "\tv{k}");
    }
    s.push('\n');
    for r in 0..embeddings.rows() {
        let _ = write!(s, "{r}");
        for x in embeddings.row(r) {
            let _ = write!(s, "\t{x}");
        }
        s.push('\n');
    }
    s
}

pub fn export_embeddings(params: &ModelParams, corpus: &Corpus, graph: &Graph, path: impl AsRef<Path>) -> Result<Matrix> {
    let e = global_embeddings(params, corpus, graph)?;
    let path = path.as_ref();
    std::fs::write(path, embeddings_tsv(&e)).map_err(|err| Error::io(path, err))?;
    Ok(e)
}

/// Parses the output of [`embeddings_tsv`].
pub fn parse_embeddings(text: &str, source_name: &str) -> Result<Matrix> {
    let mut lines = text.lines().enumerate();
    let width = match lines.next() {
        Some((_, h)) if h.starts_with("vertex_id") => h.split('\t').count() - 1,
        _ => return Err(Error::parse(source_name, 1, "missing `vertex_id` header")),
    };
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != width + 1 || fields[0] != rows.len().to_string() {
            return Err(Error::parse(source_name, idx + 1, "malformed embedding row"));
        }
        let row = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::parse(source_name, idx + 1, format!("bad value `{f}`"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, width));
    }
    Matrix::from_rows(&rows)
}

/// Matching-vector norms of every word of `t_i` against `t_j` and of `t_j`
/// against `t_i`, as TSV `direction position token norm`.
pub fn inspect_alignment(params: &ModelParams, corpus: &Corpus, i: usize, j: usize) -> Result<String> {
    if params.config.mode != Mode::WaneWw {
        return Err(Error::Config(format!(
            "alignment inspection needs a {} model, not {}",
            Mode::WaneWw,
            params.config.mode
        )));
    }
    let n = params.num_vertices().min(corpus.num_vertices());
    if i >= n || j >= n {
        return Err(Error::Invalid(format!("vertex outside 0..{n}")));
    }
    let mut s = String::from("direction\tposition\ttoken\tnorm\n");
    for (a, b) in [(i, j), (j, i)] {
        let seq = corpus.sequence(a);
        let (_, features) = text_embed_ww(seq, corpus.sequence(b), params)?;
        for (pos, (&tok, norm)) in seq.token_ids.iter().zip(&features.norms).enumerate() {
            let _ = writeln!(s, "{a}|{b}\t{pos}\t{}\t{norm}", corpus.vocab.token(tok));
        }
    }
    Ok(s)
}

/// A metric with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    pub repeats: Vec<f64>,
    pub echo: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task\t{}", self.task);
        let _ = writeln!(s, "metric\t{}", self.metric);
        let _ = writeln!(s, "value\t{}", self.value);
        let _ = writeln!(s, "seed\t{}", self.seed);
        for (k, v) in self.repeats.iter().enumerate() {
            let _ = writeln!(s, "repeat.{}\t{v}", k + 1);
        }
        for (k, v) in &self.echo {
            let _ = writeln!(s, "config.{k}\t{v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8], &[0.1, 0.85]).unwrap(), 0.75);
        assert_eq!(auc(&[1.0; 5], &[1.0; 3]).unwrap(), 0.5);
        assert_eq!(auc(&[2.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.0], &[-0.0]).unwrap(), 0.5);
        assert!(auc(&[], &[1.0]).is_err());
        assert!(auc(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn classifier_separates_two_blobs() {
        let x = Matrix::from_rows(&[
            vec![1.0, 2.0],
            vec![1.2, 1.8],
            vec![0.9, 2.2],
            vec![-1.0, -2.0],
            vec![-1.1, -1.7],
            vec![-0.8, -2.1],
        ])
        .unwrap();
        let y = [0, 0, 0, 1, 1, 1];
        let m = LinearClassifier::fit(&x, &y, 2, ClassifierConfig::default()).unwrap();
        assert_eq!(m.predict(&x), y);
    }

    #[test]
    fn embeddings_tsv_round_trips_exactly() {
        let e = Matrix::from_rows(&[vec![0.1, -1.0 / 3.0], vec![1e-300, 12345.678]]).unwrap();
        let text = embeddings_tsv(&e);
        assert!(text.starts_with("vertex_id\tv1\tv2\n"));
        assert_eq!(parse_embeddings(&text, "t").unwrap(), e);
    }

    #[test]
    fn report_lists_repeats_and_echo() {
        let mut echo = BTreeMap::new();
        echo.insert("mode".to_string(), "wane-ww".to_string());
        let r = EvalReport {
            task: "classify".into(),
            metric: "accuracy".into(),
            value: 0.5,
            seed: 3,
            repeats: vec![0.4, 0.6],
            echo,
        };
        assert_eq!(
            r.to_tsv(),
            "task\tclassify\nmetric\taccuracy\nvalue\t0.5\nseed\t3\nrepeat.1\t0.4\nrepeat.2\t0.6\nconfig.mode\twane-ww\n"
        );
    }
}
