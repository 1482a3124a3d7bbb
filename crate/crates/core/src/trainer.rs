//! Mini-batch training: weighted edge batches, `d^{3/4}` negatives, dropout
//! on word vectors and one lazy Adam update per batch.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{build_negative_sampler, EdgeSampler, Graph, NegativeSampler};
use crate::model::{
    pairs_loss, Aggregate, Align, DirectedPair, DropoutMasks, Gradients, Mode, ModelConfig,
    ModelParams, Negatives,
};
use crate::optim::{AdamConfig, AdamState, UpdateMode};
use crate::text::{Corpus, DEFAULT_MAX_LEN};

/// Negative counts accepted without `allow_any_k`.
pub const STANDARD_K: [usize; 3] = [1, 3, 5];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub align: Align,
    pub aggregate: Aggregate,
    /// Width of the structural embedding; the textual part matches it.
    pub structural_dim: usize,
    pub alphas: [f64; 3],
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Negatives per loss term (`K`).
    pub negatives: usize,
    pub allow_any_k: bool,
    /// Keep probability of the word-vector dropout; 1 disables it.
    pub keep_prob: f64,
    pub epochs: usize,
    /// Hard cap on optimizer steps, if set.
    pub max_steps: Option<usize>,
    /// Stop when the epoch loss improves by less than this fraction over
    /// `plateau_window` epochs. `None` disables early stopping.
    pub plateau_tol: Option<f64>,
    pub plateau_window: usize,
    /// One negative set per ordered pair shared by the four loss terms.
    pub share_negatives: bool,
    pub seed: u64,
    pub max_len: usize,
    /// Worker threads for batch gradients; 1 runs fully sequentially.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::WaneWw,
            align: Align::SubMul,
            aggregate: Aggregate::Max,
            structural_dim: 100,
            alphas: [1.0; 3],
            learning_rate: 1e-3,
            batch_size: 128,
            negatives: 1,
            allow_any_k: false,
            keep_prob: 0.5,
            epochs: 200,
            max_steps: None,
            plateau_tol: Some(1e-4),
            plateau_window: 10,
            share_negatives: true,
            seed: 0,
            max_len: DEFAULT_MAX_LEN,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.negatives == 0 || (!self.allow_any_k && !STANDARD_K.contains(&self.negatives)) {
            return bad(format!(
                "K = {} must be one of {STANDARD_K:?} (or >= 1 with allow_any_k)",
                self.negatives
            ));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return bad(format!("keep probability {} not in (0, 1]", self.keep_prob));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1".into());
        }
        if self.plateau_window == 0 {
            return bad("plateau window must be at least 1".into());
        }
        self.model_config()?.validate()
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut c = ModelConfig::with_structural_dim(self.mode, self.align, self.aggregate, self.structural_dim)?;
        c.alphas = self.alphas;
        Ok(c)
    }

    /// Every field as `key -> value`, in a stable order.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("mode", self.mode.to_string());
        put("align", self.align.to_string());
        put("aggregate", self.aggregate.to_string());
        put("structural_dim", self.structural_dim.to_string());
        put("alpha1", self.alphas[0].to_string());
        put("alpha2", self.alphas[1].to_string());
        put("alpha3", self.alphas[2].to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("batch_size", self.batch_size.to_string());
        put("negatives", self.negatives.to_string());
        put("allow_any_k", self.allow_any_k.to_string());
        put("keep_prob", self.keep_prob.to_string());
        put("epochs", self.epochs.to_string());
        put("max_steps", self.max_steps.map_or("none".into(), |s| s.to_string()));
        put("plateau_tol", self.plateau_tol.map_or("none".into(), |t| t.to_string()));
        put("plateau_window", self.plateau_window.to_string());
        put("share_negatives", self.share_negatives.to_string());
        put("seed", self.seed.to_string());
        put("max_len", self.max_len.to_string());
        put("threads", self.threads.to_string());
        m
    }

    /// Overrides one field from its echo key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        fn optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
            if value == "none" {
                Ok(None)
            } else {
                parse(key, value).map(Some)
            }
        }
        match key {
            "mode" => self.mode = value.parse()?,
            "align" => self.align = value.parse()?,
            "aggregate" => self.aggregate = value.parse()?,
            "structural_dim" => self.structural_dim = parse(key, value)?,
            "alpha1" => self.alphas[0] = parse(key, value)?,
            "alpha2" => self.alphas[1] = parse(key, value)?,
            "alpha3" => self.alphas[2] = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "negatives" => self.negatives = parse(key, value)?,
            "allow_any_k" => self.allow_any_k = parse(key, value)?,
            "keep_prob" => self.keep_prob = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "max_steps" => self.max_steps = optional(key, value)?,
            "plateau_tol" => self.plateau_tol = optional(key, value)?,
            "plateau_window" => self.plateau_window = parse(key, value)?,
            "share_negatives" => self.share_negatives = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }
}

/// Mean batch loss per optimizer step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<(usize, f64)>,
    pub epoch_losses: Vec<f64>,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("step\tmean_loss\n");
        for (step, loss) in &self.steps {
            let _ = writeln!(s, "{step}\t{loss}");
        }
        s
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.steps.first().map(|&(_, l)| l)
    }
}

/// Everything one edge of a batch needs, sampled up front so that gradient
/// computation is free of randomness.
struct EdgeWork {
    u: usize,
    v: usize,
    weight: f64,
    forward: Negatives,
    backward: Negatives,
    masks: DropoutMasks,
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub params: ModelParams,
    graph: &'a Graph,
    corpus: &'a Corpus,
    adam: AdamState,
    rng: ChaCha8Rng,
    edges: EdgeSampler,
    noise: NegativeSampler,
    accumulators: Vec<Gradients>,
    pool: Option<rayon::ThreadPool>,
    step: usize,
    pub log: TrainLog,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, graph: &'a Graph, corpus: &'a Corpus) -> Result<Self> {
        config.validate()?;
        if graph.num_vertices() != corpus.num_vertices() {
            return Err(Error::Invalid(format!(
                "graph has {} vertices but the corpus covers {}",
                graph.num_vertices(),
                corpus.num_vertices()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::init(config.model_config()?, graph.num_vertices(), corpus.vocab.len(), &mut rng)?;
        Self::with_params(config, params, graph, corpus, rng)
    }

    /// Continues from existing parameters with fresh optimizer state.
    pub fn from_params(config: TrainConfig, params: ModelParams, graph: &'a Graph, corpus: &'a Corpus) -> Result<Self> {
        config.validate()?;
        params.check_shapes(graph.num_vertices(), corpus.vocab.len())?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::with_params(config, params, graph, corpus, rng)
    }

    fn with_params(
        config: TrainConfig,
        params: ModelParams,
        graph: &'a Graph,
        corpus: &'a Corpus,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let edges = EdgeSampler::new(graph)?;
        let noise = build_negative_sampler(graph)?;
        let adam = AdamState::new(&params, AdamConfig::new(config.learning_rate));
        let accumulators = (0..config.threads).map(|_| Gradients::for_params(&params)).collect();
        let pool = if config.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.threads)
                    .build()
                    .map_err(|e| Error::Config(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self {
            config,
            params,
            graph,
            corpus,
            adam,
            rng,
            edges,
            noise,
            accumulators,
            pool,
            step: 0,
            log: TrainLog::default(),
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.graph.num_edges().div_ceil(self.config.batch_size).max(1)
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    fn draw_negatives(&mut self, target: usize, anchor: usize) -> Result<Negatives> {
        let k = self.config.negatives;
        let exclude = [target, anchor];
        let mut draw = |n: usize| -> Result<Vec<usize>> {
            (0..n).map(|_| self.noise.sample_excluding(&mut self.rng, &exclude)).collect()
        };
        if self.config.share_negatives {
            Ok(Negatives::shared(draw(k)?))
        } else {
            Ok(Negatives {
                per_term: [draw(k)?, draw(k)?, draw(k)?, draw(k)?],
            })
        }
    }

    fn sample_batch(&mut self) -> Result<Vec<EdgeWork>> {
        let indices = self.edges.sample_indices(self.config.batch_size, &mut self.rng);
        let uses_text = self.params.config.uses_text();
        let mut work = Vec::with_capacity(indices.len());
        for idx in indices {
            let e = self.graph.edges()[idx];
            let forward = self.draw_negatives(e.u, e.v)?;
            let backward = self.draw_negatives(e.v, e.u)?;
            let masks = if uses_text {
                let mut vertices = vec![e.u, e.v];
                vertices.extend(forward.all());
                vertices.extend(backward.all());
                DropoutMasks::sample(
                    self.config.keep_prob,
                    &vertices,
                    self.corpus,
                    self.params.config.word_dim,
                    &mut self.rng,
                )
            } else {
                DropoutMasks::none()
            };
            work.push(EdgeWork {
                u: e.u,
                v: e.v,
                weight: e.weight,
                forward,
                backward,
                masks,
            });
        }
        Ok(work)
    }

    /// One mini-batch and one optimizer update; returns the mean batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let work = self.sample_batch()?;
        let (params, corpus) = (&self.params, self.corpus);
        let run = |items: &[EdgeWork], grads: &mut Gradients| -> Result<f64> {
            let mut total = 0.0;
            for w in items {
                let pairs = [
                    DirectedPair { target: w.u, anchor: w.v, weight: w.weight, negatives: &w.forward },
                    DirectedPair { target: w.v, anchor: w.u, weight: w.weight, negatives: &w.backward },
                ];
                let loss = pairs_loss(params, corpus, &pairs, &w.masks, grads)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        step: 0,
                        detail: format!("edge ({}, {}) produced loss {loss}", w.u, w.v),
                    });
                }
                total += loss;
            }
            Ok(total)
        };
        for acc in &mut self.accumulators {
            acc.clear();
        }
        let total = match &self.pool {
            None => run(&work, &mut self.accumulators[0]),
            Some(pool) => {
                let chunk = work.len().div_ceil(self.accumulators.len()).max(1);
                let losses: Vec<Result<f64>> = pool.install(|| {
                    work.par_chunks(chunk)
                        .zip(self.accumulators.par_iter_mut())
                        .map(|(items, acc)| run(items, acc))
                        .collect()
                });
                let (first, rest) = self.accumulators.split_at_mut(1);
                for acc in rest.iter() {
                    first[0].merge(acc);
                }
                losses.into_iter().sum::<Result<f64>>()
            }
        }
        .map_err(|e| match e {
            Error::NonFinite { detail, .. } => Error::NonFinite { step: self.step, detail },
            other => other,
        })?;
        let grads = &mut self.accumulators[0];
        let scale = 1.0 / self.config.batch_size as f64;
        grads.scale(scale);
        self.adam.step(&mut self.params, grads, UpdateMode::Lazy);
        if !self.params.structural.all_finite() || !self.params.words.all_finite() {
            return Err(Error::NonFinite {
                step: self.step,
                detail: "parameters became non-finite after the update".into(),
            });
        }
        let mean = total * scale;
        self.step += 1;
        self.log.steps.push((self.step, mean));
        Ok(mean)
    }

    /// One pass of `steps_per_epoch` steps (fewer if `max_steps` is reached);
    /// returns the mean step loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0;
        for _ in 0..self.steps_per_epoch() {
            if self.config.max_steps.is_some_and(|m| self.step >= m) {
                break;
            }
            total += self.step()?;
            n += 1;
        }
        let mean = total / n.max(1) as f64;
        if n > 0 {
            self.log.epoch_losses.push(mean);
        }
        Ok(mean)
    }

    fn plateaued(&self) -> bool {
        let (Some(tol), w) = (self.config.plateau_tol, self.config.plateau_window) else {
            return false;
        };
        let l = &self.log.epoch_losses;
        if l.len() <= w {
            return false;
        }
        let (old, new) = (l[l.len() - 1 - w], l[l.len() - 1]);
        (old - new) / old.abs().max(f64::MIN_POSITIVE) < tol
    }

    /// Runs epochs until the configured count, the step cap, or a plateau.
    pub fn run(&mut self) -> Result<()> {
        for _ in 0..self.config.epochs {
            if self.config.max_steps.is_some_and(|m| self.step >= m) {
                break;
            }
            self.run_epoch()?;
            if self.plateaued() {
                self.log.stopped_early = true;
                break;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> (ModelParams, TrainLog) {
        (self.params, self.log)
    }
}

/// Trains from a fresh initialization.
pub fn train(config: TrainConfig, graph: &Graph, corpus: &Corpus) -> Result<(ModelParams, TrainLog)> {
    let mut trainer = Trainer::new(config, graph, corpus)?;
    trainer.run()?;
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let k4 = TrainConfig { negatives: 4, ..Default::default() };
        assert!(k4.validate().is_err());
        let any = TrainConfig { negatives: 4, allow_any_k: true, ..Default::default() };
        assert!(any.validate().is_ok());
        assert!(TrainConfig { keep_prob: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { structural_dim: 7, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn echo_round_trips_through_set() {
        let c = TrainConfig {
            mode: Mode::WaneWc,
            alphas: [0.5, 0.0, 2.0],
            max_steps: Some(17),
            plateau_tol: None,
            seed: 99,
            ..Default::default()
        };
        let mut back = TrainConfig::default();
        for (k, v) in c.echo() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, c);
        assert!(back.set("nonsense", "1").is_err());
        assert!(back.set("batch_size", "many").is_err());
    }
}
