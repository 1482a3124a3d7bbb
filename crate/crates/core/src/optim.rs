//! Adam with lazy row-wise moments for the embedding tables.
//!
//! ```text
//! m = b1 m + (1 - b1) g
//! v = b2 v + (1 - b2) g^2
//! p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
//! ```
//!
//! In lazy mode only rows with a gradient contribution in the current step
//! have their moments and values updated; the step counter `t` is global.

use crate::kernel::Matrix;
use crate::model::{Gradients, ModelParams, RowGrads};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateMode {
    /// Touched rows only.
    Lazy,
    /// Every row, treating untouched rows as zero gradient.
    Dense,
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn like(table: &Matrix) -> Self {
        Self {
            m: vec![0.0; table.as_slice().len()],
            v: vec![0.0; table.as_slice().len()],
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    structural: Moments,
    words: Moments,
    w1: Moments,
    w2: Moments,
}

struct Corrections {
    lr: f64,
    b1: f64,
    b2: f64,
    c1: f64,
    c2: f64,
    eps: f64,
}

impl Corrections {
    #[inline]
    fn apply(&self, p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]) {
        for k in 0..p.len() {
            m[k] = self.b1 * m[k] + (1.0 - self.b1) * g[k];
            v[k] = self.b2 * v[k] + (1.0 - self.b2) * g[k] * g[k];
            let m_hat = m[k] / self.c1;
            let v_hat = v[k] / self.c2;
            p[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

impl AdamState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            structural: Moments::like(&params.structural),
            words: Moments::like(&params.words),
            w1: Moments::like(&params.w1),
            w2: Moments::like(&params.w2),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, mode: UpdateMode) {
        self.step += 1;
        let t = self.step as i32;
        let c = Corrections {
            lr: self.config.learning_rate,
            b1: self.config.beta1,
            b2: self.config.beta2,
            c1: 1.0 - self.config.beta1.powi(t),
            c2: 1.0 - self.config.beta2.powi(t),
            eps: self.config.epsilon,
        };
        update_rows(&c, &mut params.structural, &grads.structural, &mut self.structural, mode);
        update_rows(&c, &mut params.words, &grads.words, &mut self.words, mode);
        c.apply(params.w1.as_mut_slice(), grads.w1.as_slice(), &mut self.w1.m, &mut self.w1.v);
        c.apply(params.w2.as_mut_slice(), grads.w2.as_slice(), &mut self.w2.m, &mut self.w2.v);
    }
}

fn update_rows(c: &Corrections, table: &mut Matrix, grads: &RowGrads, moments: &mut Moments, mode: UpdateMode) {
    let d = table.cols();
    let rows = table.rows();
    let mut apply = |r: usize| {
        let span = r * d..(r + 1) * d;
        c.apply(
            table.row_mut(r),
            grads.row(r),
            &mut moments.m[span.clone()],
            &mut moments.v[span],
        );
    };
    match mode {
        UpdateMode::Lazy => grads.touched().iter().for_each(|&r| apply(r)),
        UpdateMode::Dense => (0..rows).for_each(apply),
    }
}
