//! Shared test oracles. Nothing here calls into the backward code paths it
//! is used to check.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wane::kernel::Matrix;
use wane::model::{
    pairs_loss, Aggregate, Align, DirectedPair, DropoutMasks, Gradients, Mode, ModelConfig,
    ModelParams, Negatives,
};
use wane::text::Corpus;

/// Tiny random problem for gradient checks: 6 vertices, a 20-token vocabulary
/// (19 words plus the reserved token) and sequences of 1 to 5 words.
pub struct Instance {
    pub params: ModelParams,
    pub corpus: Corpus,
    pub target: usize,
    pub anchor: usize,
    pub weight: f64,
    pub negatives: Negatives,
    pub masks: DropoutMasks,
}

pub fn random_instance(seed: u64, mode: Mode, align: Align, aggregate: Aggregate, word_dim: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 6;
    let texts: Vec<String> = (0..n)
        .map(|_| {
            let len = rng.random_range(1..=5);
            (0..len)
                .map(|_| format!("w{}", rng.random_range(0..19)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let corpus = Corpus::from_texts(&texts, 300).unwrap();
    let config = ModelConfig {
        mode,
        align,
        aggregate,
        word_dim,
        alphas: [
            rng.random_range(0.5..1.5),
            rng.random_range(0.5..1.5),
            rng.random_range(0.5..1.5),
        ],
    };
    // 20-row word table regardless of how many distinct words were drawn.
    let mut params = ModelParams::init(config, n, 20, &mut rng).unwrap();
    for t in [&mut params.structural, &mut params.words, &mut params.w1, &mut params.w2] {
        t.scale(4.0);
    }
    let target = rng.random_range(0..n);
    let anchor = (target + rng.random_range(1..n)) % n;
    let others: Vec<usize> = (0..n).filter(|&v| v != target && v != anchor).collect();
    let pick = |rng: &mut ChaCha8Rng| (0..2).map(|_| others[rng.random_range(0..others.len())]).collect::<Vec<_>>();
    let negatives = if rng.random_bool(0.5) {
        Negatives::shared(pick(&mut rng))
    } else {
        Negatives {
            per_term: [pick(&mut rng), pick(&mut rng), pick(&mut rng), pick(&mut rng)],
        }
    };
    let masks = if rng.random_bool(0.5) {
        DropoutMasks::sample(0.7, &(0..n).collect::<Vec<_>>(), &corpus, word_dim, &mut rng)
    } else {
        DropoutMasks::none()
    };
    Instance {
        params,
        corpus,
        target,
        anchor,
        weight: rng.random_range(0.5..2.0),
        negatives,
        masks,
    }
}

impl Instance {
    pub fn pair(&self) -> DirectedPair<'_> {
        DirectedPair {
            target: self.target,
            anchor: self.anchor,
            weight: self.weight,
            negatives: &self.negatives,
        }
    }

    pub fn loss_at(&self, params: &ModelParams) -> f64 {
        let mut scratch = Gradients::for_params(params);
        pairs_loss(params, &self.corpus, &[self.pair()], &self.masks, &mut scratch).unwrap()
    }
}

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for entries whose true gradient is essentially zero.
pub const FD_FLOOR: f64 = 1e-6;

#[derive(Debug, Default, Clone, Copy)]
pub struct FdReport {
    pub checked: usize,
    pub worst_rel: f64,
}

fn table_mut(params: &mut ModelParams, t: usize) -> &mut Matrix {
    match t {
        0 => &mut params.structural,
        1 => &mut params.words,
        2 => &mut params.w1,
        _ => &mut params.w2,
    }
}

fn analytic(grads: &Gradients, t: usize) -> Vec<f64> {
    match t {
        0 => grads.structural.to_dense(),
        1 => grads.words.to_dense(),
        2 => grads.w1.as_slice().to_vec(),
        _ => grads.w2.as_slice().to_vec(),
    }
}

/// Central differences of `loss` over every entry of every table, compared
/// against `grads`.
pub fn finite_difference_check(
    params: &ModelParams,
    grads: &Gradients,
    loss: impl Fn(&ModelParams) -> f64,
) -> FdReport {
    let mut report = FdReport::default();
    let mut p = params.clone();
    for t in 0..4 {
        let an = analytic(grads, t);
        for k in 0..an.len() {
            let orig = table_mut(&mut p, t).as_slice()[k];
            table_mut(&mut p, t).as_mut_slice()[k] = orig + FD_STEP;
            let up = loss(&p);
            table_mut(&mut p, t).as_mut_slice()[k] = orig - FD_STEP;
            let down = loss(&p);
            table_mut(&mut p, t).as_mut_slice()[k] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            let rel = (fd - an[k]).abs() / fd.abs().max(an[k].abs()).max(FD_FLOOR);
            report.worst_rel = report.worst_rel.max(rel);
            report.checked += 1;
        }
    }
    report
}

/// All ww align/aggregate combinations, cycled by instance index.
pub fn ww_variant(k: usize) -> (Align, Aggregate) {
    let aligns = [Align::Sub, Align::Mul, Align::SubMul];
    let aggs = [Aggregate::Max, Aggregate::Mean, Aggregate::Sum];
    (aligns[k % 3], aggs[(k / 3) % 3])
}

/// Brute-force O(P*Q) AUC with ties counted one half.
pub fn brute_force_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut twice = 0u64;
    for p in pos {
        for n in neg {
            if p > n {
                twice += 2;
            } else if p == n {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * pos.len() * neg.len()) as f64
}
