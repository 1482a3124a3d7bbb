mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wane::eval::{
    auc, classify, embeddings_tsv, export_embeddings, global_embedding, inspect_alignment, pair_score,
    parse_embeddings, ClassifierConfig,
};
use wane::graph::{Edge, Graph};
use wane::kernel::{dot, Matrix};
use wane::model::{pair_embedding, text_embedding, Aggregate, Align, Mode, ModelConfig, ModelParams};
use wane::text::Corpus;

use common::brute_force_auc;

fn config(mode: Mode, align: Align) -> ModelConfig {
    ModelConfig::with_structural_dim(mode, align, Aggregate::Max, 4).unwrap()
}

fn random_params(mode: Mode, corpus: &Corpus, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ModelParams::init(config(mode, Align::SubMul), corpus.num_vertices(), corpus.vocab.len(), &mut rng).unwrap()
}

fn corpus() -> Corpus {
    Corpus::from_texts(
        &["graph neural model", "text graph", "graph neural model", "protein fold", "lonely vertex"],
        50,
    )
    .unwrap()
}

fn graph() -> Graph {
    Graph::from_edges(5, vec![Edge::new(0, 1, 1.0), Edge::new(1, 2, 1.0), Edge::new(1, 3, 1.0)]).unwrap()
}

proptest! {
    #[test]
    fn sort_auc_equals_brute_force(
        pos in prop::collection::vec(-3i32..3, 1..60),
        neg in prop::collection::vec(-3i32..3, 1..60),
        scale in 0.1f64..10.0,
    ) {
        // Small integer grids force many ties.
        let pos: Vec<f64> = pos.iter().map(|&x| x as f64 * scale).collect();
        let neg: Vec<f64> = neg.iter().map(|&x| x as f64 * scale).collect();
        prop_assert_eq!(auc(&pos, &neg).unwrap(), brute_force_auc(&pos, &neg));
    }

    #[test]
    fn auc_is_invariant_under_increasing_maps(
        pos in prop::collection::vec(-5.0f64..5.0, 1..50),
        neg in prop::collection::vec(-5.0f64..5.0, 1..50),
    ) {
        let base = auc(&pos, &neg).unwrap();
        // Exact on this range: exp and cube preserve order and distinctness.
        for f in [|x: f64| x.exp(), |x: f64| x * x * x + 2.0 * x] {
            let p: Vec<f64> = pos.iter().map(|&x| f(x)).collect();
            let n: Vec<f64> = neg.iter().map(|&x| f(x)).collect();
            prop_assert_eq!(auc(&p, &n).unwrap(), base);
        }
    }
}

#[test]
fn zero_parameters_score_zero() {
    let c = corpus();
    for mode in [Mode::Wane, Mode::WaneWc, Mode::WaneWw] {
        let p = ModelParams::zeros(config(mode, Align::Sub), 5, c.vocab.len()).unwrap();
        for (i, j) in [(0, 1), (2, 4), (3, 3)] {
            assert_eq!(pair_score(&p, &c, i, j).unwrap(), 0.0);
        }
    }
}

#[test]
fn scores_are_symmetric() {
    let c = corpus();
    for (k, mode) in [Mode::Wane, Mode::WaneWc, Mode::WaneWw].into_iter().enumerate() {
        let p = random_params(mode, &c, k as u64);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(pair_score(&p, &c, i, j).unwrap(), pair_score(&p, &c, j, i).unwrap());
            }
        }
    }
}

#[test]
fn hand_set_two_vertex_score() {
    // Averaging mode with one-word texts: t_v is the word vector itself.
    let c = Corpus::from_texts(&["alpha", "beta"], 10).unwrap();
    let mut p = ModelParams::zeros(config(Mode::Wane, Align::Sub), 2, c.vocab.len()).unwrap();
    p.structural = Matrix::from_rows(&[vec![1.0, 2.0, 0.0, -1.0], vec![0.5, 0.5, 3.0, 2.0]]).unwrap();
    let alpha = c.vocab.id("alpha").unwrap();
    let beta = c.vocab.id("beta").unwrap();
    p.words.row_mut(alpha).copy_from_slice(&[1.0, 0.0, 2.0, 0.0]);
    p.words.row_mut(beta).copy_from_slice(&[3.0, 1.0, 0.5, 4.0]);
    // s: 0.5 + 1 + 0 - 2 = -0.5; t: 3 + 0 + 1 + 0 = 4.
    assert_eq!(pair_score(&p, &c, 0, 1).unwrap(), 3.5);
}

#[test]
fn structure_only_models_score_structure() {
    let c = corpus();
    let mut p = random_params(Mode::WaneWw, &c, 3);
    p.config.alphas = [0.0; 3];
    let s = dot(p.structural.row(1), p.structural.row(3));
    assert_eq!(pair_score(&p, &c, 1, 3).unwrap(), s);
}

#[test]
fn global_embedding_cases() {
    let c = corpus();
    let g = graph();
    for mode in [Mode::Wane, Mode::WaneWc, Mode::WaneWw] {
        let p = random_params(mode, &c, 11);
        // Vertex 0 has the single neighbor 1.
        let h = global_embedding(&p, &c, &g, 0).unwrap();
        assert_eq!(h, pair_embedding(&p, &c, 0, 1).unwrap().h_i());
        // Vertex 4 is isolated: self-alignment.
        let h = global_embedding(&p, &c, &g, 4).unwrap();
        let mut expect = p.structural.row(4).to_vec();
        expect.extend(text_embedding(&p, &c, 4, 4).unwrap());
        assert_eq!(h, expect);
        assert!(global_embedding(&p, &c, &g, 5).is_err());
    }
}

#[test]
fn neighbors_with_identical_text_give_that_pair_embedding() {
    // Vertex 1 neighbors 0 and 2, whose texts are identical.
    let c = Corpus::from_texts(&["graph neural model", "text graph", "graph neural model"], 50).unwrap();
    let g = Graph::from_edges(3, vec![Edge::new(0, 1, 1.0), Edge::new(1, 2, 1.0)]).unwrap();
    for mode in [Mode::Wane, Mode::WaneWc, Mode::WaneWw] {
        let p = random_params(mode, &c, 5);
        let h = global_embedding(&p, &c, &g, 1).unwrap();
        let single = text_embedding(&p, &c, 1, 0).unwrap();
        let d = p.config.structural_dim();
        for (a, b) in h[d..].iter().zip(&single) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }
}

#[test]
fn classification_separable_and_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for v in 0..60 {
        let c = v % 2;
        let center = if c == 0 { 2.0 } else { -2.0 };
        rows.push((0..5).map(|_| center + rng.random_range(-0.5..0.5)).collect::<Vec<f64>>());
        labels.push(c);
    }
    let x = Matrix::from_rows(&rows).unwrap();
    let r = classify(&x, &labels, 0.5, 10, 3, ClassifierConfig::default()).unwrap();
    assert_eq!(r.mean_accuracy, 1.0);
    assert_eq!(r.accuracies.len(), 10);
    assert_eq!(r, classify(&x, &labels, 0.5, 10, 3, ClassifierConfig::default()).unwrap());
}

#[test]
fn classification_recovers_distinct_labels_on_training_identical_embeddings() {
    // Each class sits on its own one-hot point; every test point matches a
    // training point exactly.
    let labels: Vec<usize> = (0..70).map(|v| v % 7).collect();
    let rows: Vec<Vec<f64>> = labels.iter().map(|&c| (0..7).map(|k| (k == c) as u8 as f64).collect()).collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let r = classify(&x, &labels, 0.5, 3, 0, ClassifierConfig::default()).unwrap();
    assert_eq!(r.mean_accuracy, 1.0);
}

#[test]
fn shuffled_labels_sit_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 1400;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..7)).collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let r = classify(&x, &labels, 0.5, 10, 9, ClassifierConfig::default()).unwrap();
    assert!((r.mean_accuracy - 1.0 / 7.0).abs() < 0.05, "{}", r.mean_accuracy);
}

#[test]
fn classification_rejects_bad_inputs() {
    let x = Matrix::zeros(4, 2);
    assert!(classify(&x, &[0, 1, 0], 0.5, 1, 0, ClassifierConfig::default()).is_err());
    assert!(classify(&x, &[0, 1, 0, 1], 1.0, 1, 0, ClassifierConfig::default()).is_err());
    assert!(classify(&x, &[0, 1, 0, 1], 0.5, 0, 0, ClassifierConfig::default()).is_err());
}

#[test]
fn export_writes_header_and_one_row_per_vertex() {
    let c = corpus();
    let g = graph();
    let p = random_params(Mode::WaneWw, &c, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.tsv");
    let e = export_embeddings(&p, &c, &g, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0].split('\t').count(), 1 + p.config.embedding_dim());
    assert_eq!(parse_embeddings(&text, "emb").unwrap(), e);
    assert_eq!(embeddings_tsv(&e), text);
}

#[test]
fn alignment_inspection() {
    let c = Corpus::from_texts(&["same", "same", "one two three", "four five"], 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = config(Mode::WaneWw, Align::Sub);
    let p = ModelParams::init(cfg, 4, c.vocab.len(), &mut rng).unwrap();

    let t = inspect_alignment(&p, &c, 0, 1).unwrap();
    let rows: Vec<&str> = t.lines().skip(1).collect();
    assert_eq!(rows, ["0|1\t0\tsame\t0", "1|0\t0\tsame\t0"]);

    let pm = ModelParams::init(config(Mode::WaneWw, Align::SubMul), 4, c.vocab.len(), &mut rng).unwrap();
    let t = inspect_alignment(&pm, &c, 2, 3).unwrap();
    let rows: Vec<Vec<&str>> = t.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.iter().filter(|r| r[0] == "2|3").count(), 3);
    assert_eq!(rows.iter().filter(|r| r[0] == "3|2").count(), 2);
    assert!(rows.iter().all(|r| r[3].parse::<f64>().unwrap() >= 0.0));

    let wc = ModelParams::init(config(Mode::WaneWc, Align::Sub), 4, c.vocab.len(), &mut rng).unwrap();
    assert!(inspect_alignment(&wc, &c, 0, 1).is_err());
}
