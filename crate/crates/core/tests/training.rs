use std::collections::BTreeMap;

use wane::checkpoint::Checkpoint;
use wane::graph::{Edge, Graph};
use wane::model::Mode;
use wane::text::Corpus;
use wane::trainer::{train, TrainConfig, Trainer};
use wane::{CheckpointError, Error};

fn toy() -> (Graph, Corpus) {
    // Two triangles joined by one bridge; texts follow the triangles.
    let edges = vec![
        Edge::new(0, 1, 1.0),
        Edge::new(1, 2, 1.0),
        Edge::new(0, 2, 2.0),
        Edge::new(3, 4, 1.0),
        Edge::new(4, 5, 1.0),
        Edge::new(3, 5, 1.0),
        Edge::new(2, 3, 0.5),
    ];
    let graph = Graph::from_edges(6, edges).unwrap();
    let corpus = Corpus::from_texts(
        &[
            "neural network learning gradient",
            "deep neural learning",
            "gradient descent network training",
            "protein folding structure",
            "protein binding site structure",
            "folding energy landscape",
        ],
        300,
    )
    .unwrap();
    (graph, corpus)
}

fn small(mode: Mode, steps: usize) -> TrainConfig {
    TrainConfig {
        mode,
        structural_dim: 8,
        batch_size: 8,
        learning_rate: 0.01,
        keep_prob: 0.9,
        max_steps: Some(steps),
        epochs: usize::MAX,
        plateau_tol: None,
        seed: 7,
        ..Default::default()
    }
}

fn window_mean(xs: &[(usize, f64)]) -> f64 {
    xs.iter().map(|&(_, l)| l).sum::<f64>() / xs.len() as f64
}

#[test]
fn loss_decreases_in_every_mode() {
    let (g, c) = toy();
    for mode in [Mode::Wane, Mode::WaneWc, Mode::WaneWw] {
        let (_, log) = train(small(mode, 200), &g, &c).unwrap();
        assert_eq!(log.steps.len(), 200);
        let first = window_mean(&log.steps[..50]);
        let last = window_mean(&log.steps[150..]);
        assert!(last < first, "{mode}: {first} -> {last}");
    }
}

#[test]
fn zero_alphas_leave_word_tables_untouched() {
    let (g, c) = toy();
    let config = TrainConfig { alphas: [0.0; 3], ..small(Mode::WaneWc, 30) };
    let mut t = Trainer::new(config, &g, &c).unwrap();
    let before = t.params.clone();
    t.run().unwrap();
    assert_eq!(t.params.words, before.words);
    assert_eq!(t.params.w1, before.w1);
    assert_eq!(t.params.w2, before.w2);
    assert_ne!(t.params.structural, before.structural);
}

#[test]
fn training_is_bit_reproducible() {
    let (g, c) = toy();
    for threads in [1, 3] {
        let config = TrainConfig { threads, ..small(Mode::WaneWw, 25) };
        let (a, la) = train(config.clone(), &g, &c).unwrap();
        let (b, lb) = train(config, &g, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        let bytes = |p| Checkpoint::new(p, BTreeMap::new()).to_bytes();
        assert_eq!(bytes(a), bytes(b));
    }
}

#[test]
fn different_seeds_differ() {
    let (g, c) = toy();
    let (a, _) = train(small(Mode::Wane, 5), &g, &c).unwrap();
    let (b, _) = train(TrainConfig { seed: 8, ..small(Mode::Wane, 5) }, &g, &c).unwrap();
    assert_ne!(a, b);
}

#[test]
fn plateau_stops_early() {
    let (g, c) = toy();
    let config = TrainConfig {
        max_steps: None,
        epochs: 100_000,
        plateau_tol: Some(0.5),
        plateau_window: 2,
        ..small(Mode::Wane, 0)
    };
    let (_, log) = train(config, &g, &c).unwrap();
    assert!(log.stopped_early);
    assert!(log.epoch_losses.len() < 100);
}

#[test]
fn checkpoint_round_trip_through_disk() {
    let (g, c) = toy();
    let config = small(Mode::WaneWc, 10);
    let (params, _) = train(config.clone(), &g, &c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    let ckpt = Checkpoint::new(params.clone(), config.echo());
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.params, params);
    let mut restored = TrainConfig::default();
    for (k, v) in back.echo.iter().filter(|(k, _)| !k.starts_with("model.")) {
        restored.set(k, v).unwrap();
    }
    assert_eq!(restored, config);

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
    assert!(matches!(
        Checkpoint::load(&path),
        Err(Error::Checkpoint(CheckpointError::Checksum))
    ));
}

#[test]
fn graph_corpus_size_mismatch_is_rejected() {
    let (g, _) = toy();
    let c = Corpus::from_texts(&["a", "b"], 10).unwrap();
    assert!(Trainer::new(small(Mode::Wane, 1), &g, &c).is_err());
}
