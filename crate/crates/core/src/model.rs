//! Parameter tables, the three text encoders and the negative-sampled joint
//! objective.
//!
//! Every vertex `v` carries a free structural vector `s_v` and a textual vector
//! `t_{v|u}` that is recomputed against the text of the vertex `u` it is paired
//! with. For an ordered pair (target `i`, anchor `j`) the loss is
//!
//! ```text
//! -w_ij [ l(s_i | s_j) + a1 l(t_i|j | t_j|i) + a2 l(t_i|j | s_j) + a3 l(s_i | t_j|i) ]
//! l(a | b) = ln sigmoid(b.a) + sum_k ln sigmoid(-b.a_k)
//! ```
//!
//! where `a_k` is the embedding of negative vertex `k` of the same kind as `a`;
//! textual negatives are encoded against the anchor's text.
//!
//! Sequences are stored word-major: an `M x d` matrix whose rows are word
//! vectors.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernel::{self, axpy, dot, gemm, log_sigmoid, sigmoid, Matrix, Trans};
use crate::text::{Corpus, TextSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Context-free average of word vectors.
    Wane,
    /// Word-by-context attention.
    WaneWc,
    /// Word-by-word alignment.
    WaneWw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Align {
    Sub,
    Mul,
    SubMul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Aggregate {
    Max,
    Mean,
    Sum,
}

macro_rules! string_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(&self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " `{}` (expected one of: {})"),
                        other,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

string_enum!(Mode { Wane => "wane", WaneWc => "wane-wc", WaneWw => "wane-ww" });
string_enum!(Align { Sub => "sub", Mul => "mul", SubMul => "submult" });
string_enum!(Aggregate { Max => "max", Mean => "mean", Sum => "sum" });

/// Encoder choice, dimensions and loss weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub mode: Mode,
    pub align: Align,
    pub aggregate: Aggregate,
    /// Word vector width `d_w`.
    pub word_dim: usize,
    /// Weights of the text-text, text-structure and structure-text terms.
    pub alphas: [f64; 3],
}

impl ModelConfig {
    /// Picks `d_w` so that the textual embedding has `structural_dim` entries.
    pub fn with_structural_dim(
        mode: Mode,
        align: Align,
        aggregate: Aggregate,
        structural_dim: usize,
    ) -> Result<Self> {
        let doubles = mode == Mode::WaneWw && align == Align::SubMul;
        if structural_dim == 0 || (doubles && structural_dim % 2 != 0) {
            return Err(Error::Config(format!(
                "structural dimension {structural_dim} cannot be matched by the textual embedding"
            )));
        }
        Ok(Self {
            mode,
            align,
            aggregate,
            word_dim: if doubles { structural_dim / 2 } else { structural_dim },
            alphas: [1.0; 3],
        })
    }

    /// Width of `h_t`, which also fixes the structural width.
    pub fn text_dim(&self) -> usize {
        match (self.mode, self.align) {
            (Mode::WaneWw, Align::SubMul) => 2 * self.word_dim,
            _ => self.word_dim,
        }
    }

    pub fn structural_dim(&self) -> usize {
        self.text_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.structural_dim() + self.text_dim()
    }

    /// True when any loss term reads the textual embeddings.
    pub fn uses_text(&self) -> bool {
        self.alphas.iter().any(|&a| a != 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 {
            return Err(Error::Config("word dimension must be positive".into()));
        }
        if self.alphas.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {:?}", self.alphas)));
        }
        Ok(())
    }
}

/// All trainable tables.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `N x d_s`, one structural vector per vertex.
    pub structural: Matrix,
    /// `|V| x d_w` word vectors.
    pub words: Matrix,
    /// Attention matrices for word-by-context mode, `d_w x d_w`; empty otherwise.
    pub w1: Matrix,
    pub w2: Matrix,
}

fn uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let bound = 0.5 / (cols.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

impl ModelParams {
    /// Uniform init in `±0.5/sqrt(width)` for every table.
    pub fn init(
        config: ModelConfig,
        num_vertices: usize,
        vocab_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let d_s = config.structural_dim();
        let d_w = config.word_dim;
        let structural = uniform(num_vertices, d_s, rng);
        let words = uniform(vocab_size, d_w, rng);
        let (w1, w2) = if config.mode == Mode::WaneWc {
            (uniform(d_w, d_w, rng), uniform(d_w, d_w, rng))
        } else {
            (Matrix::zeros(0, 0), Matrix::zeros(0, 0))
        };
        Ok(Self {
            config,
            structural,
            words,
            w1,
            w2,
        })
    }

    pub fn zeros(config: ModelConfig, num_vertices: usize, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        let d_w = config.word_dim;
        let att = if config.mode == Mode::WaneWc { d_w } else { 0 };
        Ok(Self {
            structural: Matrix::zeros(num_vertices, config.structural_dim()),
            words: Matrix::zeros(vocab_size, d_w),
            w1: Matrix::zeros(att, att),
            w2: Matrix::zeros(att, att),
            config,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.structural.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.words.rows()
    }

    /// Checks table shapes against the config and the data they will index.
    pub fn check_shapes(&self, num_vertices: usize, vocab_size: usize) -> Result<()> {
        let c = &self.config;
        let att = if c.mode == Mode::WaneWc { c.word_dim } else { 0 };
        let expect = [
            ("structural", self.structural.shape(), (num_vertices, c.structural_dim())),
            ("words", self.words.shape(), (vocab_size, c.word_dim)),
            ("w1", self.w1.shape(), (att, att)),
            ("w2", self.w2.shape(), (att, att)),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::Shape(format!("{name} table is {got:?}, expected {want:?}")));
            }
        }
        Ok(())
    }
}

/// Per-row gradient accumulator over a parameter table. Storage is dense;
/// the touched-row list keeps clearing and sparse updates proportional to the
/// rows actually used.
#[derive(Clone, Debug)]
pub struct RowGrads {
    dim: usize,
    data: Vec<f64>,
    touched: Vec<usize>,
    is_touched: Vec<bool>,
}

impl RowGrads {
    pub fn new(rows: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; rows * dim],
            touched: Vec::new(),
            is_touched: vec![false; rows],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn add(&mut self, row: usize, grad: &[f64], scale: f64) {
        if !self.is_touched[row] {
            self.is_touched[row] = true;
            self.touched.push(row);
        }
        axpy(scale, grad, &mut self.data[row * self.dim..(row + 1) * self.dim]);
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    /// Rows with at least one contribution, in first-touch order.
    pub fn touched(&self) -> &[usize] {
        &self.touched
    }

    pub fn scale(&mut self, s: f64) {
        for &r in &self.touched {
            self.data[r * self.dim..(r + 1) * self.dim]
                .iter_mut()
                .for_each(|x| *x *= s);
        }
    }

    pub fn clear(&mut self) {
        for &r in &self.touched {
            self.data[r * self.dim..(r + 1) * self.dim].fill(0.0);
            self.is_touched[r] = false;
        }
        self.touched.clear();
    }

    pub fn merge(&mut self, other: &RowGrads) {
        for &r in &other.touched {
            let src = &other.data[r * self.dim..(r + 1) * self.dim];
            if !self.is_touched[r] {
                self.is_touched[r] = true;
                self.touched.push(r);
            }
            axpy(1.0, src, &mut self.data[r * self.dim..(r + 1) * self.dim]);
        }
    }

    /// Dense copy of the full table.
    pub fn to_dense(&self) -> Vec<f64> {
        self.data.clone()
    }
}

/// Gradients of the loss (to be minimized) with respect to every table.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub structural: RowGrads,
    pub words: RowGrads,
    pub w1: Matrix,
    pub w2: Matrix,
}

impl Gradients {
    pub fn for_params(params: &ModelParams) -> Self {
        Self {
            structural: RowGrads::new(params.structural.rows(), params.structural.cols()),
            words: RowGrads::new(params.words.rows(), params.words.cols()),
            w1: Matrix::zeros(params.w1.rows(), params.w1.cols()),
            w2: Matrix::zeros(params.w2.rows(), params.w2.cols()),
        }
    }

    pub fn clear(&mut self) {
        self.structural.clear();
        self.words.clear();
        self.w1.fill(0.0);
        self.w2.fill(0.0);
    }

    pub fn scale(&mut self, s: f64) {
        self.structural.scale(s);
        self.words.scale(s);
        self.w1.scale(s);
        self.w2.scale(s);
    }

    pub fn merge(&mut self, other: &Gradients) {
        self.structural.merge(&other.structural);
        self.words.merge(&other.words);
        self.w1.add_scaled(&other.w1, 1.0);
        self.w2.add_scaled(&other.w2, 1.0);
    }
}

/// Inverted-dropout masks on the word vectors of each sequence, one mask per
/// vertex per loss evaluation. Entries are `0` or `1/keep`.
#[derive(Clone, Debug, Default)]
pub struct DropoutMasks {
    masks: HashMap<usize, Matrix>,
}

impl DropoutMasks {
    /// No dropout (evaluation).
    pub fn none() -> Self {
        Self::default()
    }

    /// Draws a mask for each listed vertex that lacks one. `keep >= 1`
    /// disables dropout.
    pub fn sample(
        keep: f64,
        vertices: &[usize],
        corpus: &Corpus,
        word_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut masks = HashMap::new();
        if keep < 1.0 {
            for &v in vertices {
                masks.entry(v).or_insert_with(|| {
                    let m = corpus.sequence(v).len();
                    let data = (0..m * word_dim)
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    Matrix::from_vec(m, word_dim, data).expect("sized")
                });
            }
        }
        Self { masks }
    }

    pub fn insert(&mut self, vertex: usize, mask: Matrix) {
        self.masks.insert(vertex, mask);
    }

    pub fn get(&self, vertex: usize) -> Option<&Matrix> {
        self.masks.get(&vertex)
    }
}

/// Word matrix of one sequence after dropout, rows in canonical order.
///
/// Rows are sorted by content so that every encoder sees a sequence as the
/// multiset of its word vectors: reordering the words of either side of a
/// pair cannot change any floating-point summation order.
struct Embedded<'a> {
    ids: &'a [usize],
    x: Matrix,
    mask: Option<&'a Matrix>,
    /// Original position of each row of `x`.
    order: Vec<usize>,
}

impl Embedded<'_> {
    /// Row of `x` holding original position `p`, for every `p`.
    fn rows_by_position(&self) -> Vec<usize> {
        let mut inv = vec![0; self.order.len()];
        for (r, &p) in self.order.iter().enumerate() {
            inv[p] = r;
        }
        inv
    }
}

fn embed<'a>(params: &ModelParams, seq: &'a TextSequence, mask: Option<&'a Matrix>) -> Result<Embedded<'a>> {
    if seq.is_empty() {
        return Err(Error::Invalid(format!("vertex {} has an empty sequence", seq.vertex)));
    }
    let d = params.words.cols();
    let mut x = Matrix::zeros(seq.len(), d);
    for (p, &id) in seq.token_ids.iter().enumerate() {
        if id >= params.words.rows() {
            return Err(Error::Invalid(format!("token id {id} outside vocabulary")));
        }
        x.row_mut(p).copy_from_slice(params.words.row(id));
    }
    if let Some(mask) = mask {
        if mask.shape() != x.shape() {
            return Err(Error::Shape(format!(
                "dropout mask {:?} for sequence {:?}",
                mask.shape(),
                x.shape()
            )));
        }
        x.hadamard_assign(mask);
    }
    let mut order: Vec<usize> = (0..x.rows()).collect();
    order.sort_by(|&p, &q| {
        x.row(p)
            .iter()
            .zip(x.row(q))
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut sorted = Matrix::zeros(x.rows(), x.cols());
    for (r, &p) in order.iter().enumerate() {
        sorted.row_mut(r).copy_from_slice(x.row(p));
    }
    Ok(Embedded {
        ids: &seq.token_ids,
        x: sorted,
        mask,
        order,
    })
}

fn scatter(grads: &mut RowGrads, emb: &Embedded<'_>, gx: &Matrix) {
    match emb.mask {
        None => {
            for (r, &p) in emb.order.iter().enumerate() {
                grads.add(emb.ids[p], gx.row(r), 1.0);
            }
        }
        Some(mask) => {
            let mut buf = vec![0.0; gx.cols()];
            for (r, &p) in emb.order.iter().enumerate() {
                for ((b, g), m) in buf.iter_mut().zip(gx.row(r)).zip(mask.row(p)) {
                    *b = g * m;
                }
                grads.add(emb.ids[p], &buf, 1.0);
            }
        }
    }
}

/// Forward intermediates of one encoded side.
enum SideCache {
    Average,
    Context {
        context: Vec<f64>,
        /// `tanh(W1 c + W2 x_i)`, one row per word.
        activation: Matrix,
        /// Per-dimension attention over the words (columns sum to one).
        weights: Matrix,
    },
    Word {
        /// `M_b x M_a` affinity, kept so the reverse side can reuse it.
        affinity: Matrix,
        /// Column softmax of the affinity.
        attention: Matrix,
        /// Attended counterparts, one row per word of the encoded sequence.
        attended: Matrix,
        /// Matching vectors as columns, `d_t x M_a`.
        matching: Matrix,
        argmax: Option<Vec<usize>>,
    },
}

struct Side {
    h: Vec<f64>,
    cache: SideCache,
}

fn encode_average(xa: &Matrix) -> Side {
    let (m, d) = xa.shape();
    let inv = 1.0 / m as f64;
    let mut h = vec![0.0; d];
    for i in 0..m {
        axpy(inv, xa.row(i), &mut h);
    }
    Side {
        h,
        cache: SideCache::Average,
    }
}

fn encode_context(params: &ModelParams, xa: &Matrix, xb: &Matrix) -> Result<Side> {
    let (m_a, d) = xa.shape();
    let mut context = vec![0.0; d];
    for k in 0..xb.rows() {
        axpy(1.0, xb.row(k), &mut context);
    }
    let c = Matrix::from_vec(1, d, context.clone())?;
    // pre[i] = W1 c + W2 x_i, computed as row vectors.
    let u = kernel::matmul_t(&c, Trans::No, &params.w1, Trans::Yes)?;
    let mut activation = Matrix::zeros(m_a, d);
    for i in 0..m_a {
        activation.row_mut(i).copy_from_slice(u.row(0));
    }
    gemm(1.0, xa, Trans::No, &params.w2, Trans::Yes, 1.0, &mut activation)?;
    activation.as_mut_slice().iter_mut().for_each(|x| *x = x.tanh());
    let weights = kernel::col_softmax(&activation);
    let mut h = vec![0.0; d];
    for i in 0..m_a {
        for ((h, w), x) in h.iter_mut().zip(weights.row(i)).zip(xa.row(i)) {
            *h += w * x;
        }
    }
    Ok(Side {
        h,
        cache: SideCache::Context {
            context,
            activation,
            weights,
        },
    })
}

/// `affinity` is `M_b x M_a`; computed here when not supplied.
fn encode_word(params: &ModelParams, xa: &Matrix, xb: &Matrix, affinity: Option<Matrix>) -> Result<Side> {
    let affinity = match affinity {
        Some(a) => a,
        None => kernel::matmul_t(xb, Trans::No, xa, Trans::Yes)?,
    };
    let attention = kernel::col_softmax(&affinity);
    let attended = kernel::matmul_t(&attention, Trans::Yes, xb, Trans::No)?;
    let (m_a, d) = xa.shape();
    let align = params.config.align;
    let d_t = params.config.text_dim();
    let mut matching = Matrix::zeros(d_t, m_a);
    for i in 0..m_a {
        let (x, xt) = (xa.row(i), attended.row(i));
        for r in 0..d {
            match align {
                Align::Sub => matching.set(r, i, x[r] - xt[r]),
                Align::Mul => matching.set(r, i, x[r] * xt[r]),
                Align::SubMul => {
                    matching.set(r, i, x[r] - xt[r]);
                    matching.set(d + r, i, x[r] * xt[r]);
                }
            }
        }
    }
    let (h, argmax) = match params.config.aggregate {
        Aggregate::Max => {
            let p = kernel::maxpool_cols(&matching)?;
            (p.values, Some(p.argmax))
        }
        Aggregate::Mean => (kernel::meanpool_cols(&matching)?, None),
        Aggregate::Sum => (kernel::sumpool_cols(&matching)?, None),
    };
    Ok(Side {
        h,
        cache: SideCache::Word {
            affinity,
            attention,
            attended,
            matching,
            argmax,
        },
    })
}

/// Encodes `xa` in the context of `xb`.
fn encode_side(params: &ModelParams, xa: &Matrix, xb: &Matrix, affinity: Option<Matrix>) -> Result<Side> {
    match params.config.mode {
        Mode::Wane => Ok(encode_average(xa)),
        Mode::WaneWc => encode_context(params, xa, xb),
        Mode::WaneWw => encode_word(params, xa, xb, affinity),
    }
}

/// Accumulates `dL/dxa`, `dL/dxb` and attention-matrix gradients for one side.
#[allow(clippy::too_many_arguments)]
fn backward_side(
    params: &ModelParams,
    xa: &Matrix,
    xb: &Matrix,
    side: &Side,
    gh: &[f64],
    gxa: &mut Matrix,
    gxb: &mut Matrix,
    grads: &mut Gradients,
) -> Result<()> {
    match &side.cache {
        SideCache::Average => {
            let inv = 1.0 / xa.rows() as f64;
            for i in 0..xa.rows() {
                axpy(inv, gh, gxa.row_mut(i));
            }
        }
        SideCache::Context {
            context,
            activation,
            weights,
        } => {
            let (m_a, d) = xa.shape();
            let mut g_weights = Matrix::zeros(m_a, d);
            for i in 0..m_a {
                let (x, w) = (xa.row(i), weights.row(i));
                let gw = g_weights.row_mut(i);
                let gx = gxa.row_mut(i);
                for r in 0..d {
                    gw[r] = gh[r] * x[r];
                    gx[r] += gh[r] * w[r];
                }
            }
            let mut g_pre = kernel::col_softmax_backward(weights, &g_weights);
            for (g, t) in g_pre.as_mut_slice().iter_mut().zip(activation.as_slice()) {
                *g *= 1.0 - t * t;
            }
            let mut g_u = vec![0.0; d];
            for i in 0..m_a {
                axpy(1.0, g_pre.row(i), &mut g_u);
            }
            gemm(1.0, &g_pre, Trans::Yes, xa, Trans::No, 1.0, &mut grads.w2)?;
            gemm(1.0, &g_pre, Trans::No, &params.w2, Trans::No, 1.0, gxa)?;
            for p in 0..d {
                axpy(g_u[p], context, grads.w1.row_mut(p));
            }
            let g_u = Matrix::from_vec(1, d, g_u)?;
            let g_c = kernel::matmul(&g_u, &params.w1)?;
            for k in 0..xb.rows() {
                axpy(1.0, g_c.row(0), gxb.row_mut(k));
            }
        }
        SideCache::Word {
            attention,
            attended,
            matching,
            argmax,
            ..
        } => {
            let (m_a, d) = xa.shape();
            let mut g_match = match argmax {
                Some(argmax) => kernel::maxpool_cols_backward(argmax, m_a, gh),
                None if params.config.aggregate == Aggregate::Sum => {
                    kernel::sumpool_cols_backward(matching.rows(), m_a, gh)
                }
                None => kernel::meanpool_cols_backward(matching.rows(), m_a, gh),
            };
            let mut g_att = Matrix::zeros(m_a, d);
            for i in 0..m_a {
                let (x, xt) = (xa.row(i), attended.row(i));
                for r in 0..d {
                    let (gx, gt) = match params.config.align {
                        Align::Sub => {
                            let g = g_match.get(r, i);
                            (g, -g)
                        }
                        Align::Mul => {
                            let g = g_match.get(r, i);
                            (g * xt[r], g * x[r])
                        }
                        Align::SubMul => {
                            let (gs, gm) = (g_match.get(r, i), g_match.get(d + r, i));
                            (gs + gm * xt[r], -gs + gm * x[r])
                        }
                    };
                    gxa.row_mut(i)[r] += gx;
                    g_att.row_mut(i)[r] = gt;
                }
            }
            g_match.fill(0.0);
            // attended = attention^T xb
            let g_attention = kernel::matmul_t(xb, Trans::No, &g_att, Trans::Yes)?;
            gemm(1.0, attention, Trans::No, &g_att, Trans::No, 1.0, gxb)?;
            // affinity = xb xa^T
            let g_affinity = kernel::col_softmax_backward(attention, &g_attention);
            gemm(1.0, &g_affinity, Trans::No, xa, Trans::No, 1.0, gxb)?;
            gemm(1.0, &g_affinity, Trans::Yes, xb, Trans::No, 1.0, gxa)?;
        }
    }
    Ok(())
}

fn check_vertex(params: &ModelParams, corpus: &Corpus, v: usize) -> Result<()> {
    if v >= params.num_vertices() || v >= corpus.num_vertices() {
        return Err(Error::Invalid(format!(
            "vertex {v} outside range 0..{}",
            params.num_vertices().min(corpus.num_vertices())
        )));
    }
    Ok(())
}

/// Per-word alignment features of one encoded direction.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchingFeatures {
    /// One matching vector per word of the encoded sequence (rows).
    pub vectors: Matrix,
    pub norms: Vec<f64>,
    /// Column-softmax attention, `M_b x M_a`.
    pub attention: Matrix,
}

fn params_word_dim(params: &ModelParams) -> usize {
    params.words.cols()
}

/// Mean of the sequence's word vectors.
pub fn text_embed_avg(seq: &TextSequence, params: &ModelParams) -> Result<Vec<f64>> {
    let e = embed(params, seq, None)?;
    Ok(encode_average(&e.x).h)
}

/// Word-by-context embedding of `seq_a` given `seq_b`.
pub fn text_embed_wc(seq_a: &TextSequence, seq_b: &TextSequence, params: &ModelParams) -> Result<Vec<f64>> {
    let d = params_word_dim(params);
    if params.w1.shape() != (d, d) || params.w2.shape() != (d, d) {
        return Err(Error::Shape("word-by-context attention needs d_w x d_w matrices".into()));
    }
    let a = embed(params, seq_a, None)?;
    let b = embed(params, seq_b, None)?;
    Ok(encode_context(params, &a.x, &b.x)?.h)
}

/// Attention weights of the word-by-context encoder (`M_a x d_w`; every
/// column sums to one).
pub fn context_attention(seq_a: &TextSequence, seq_b: &TextSequence, params: &ModelParams) -> Result<Matrix> {
    let a = embed(params, seq_a, None)?;
    let b = embed(params, seq_b, None)?;
    match encode_context(params, &a.x, &b.x)?.cache {
        SideCache::Context { weights, .. } => {
            let rows: Vec<Vec<f64>> = a.rows_by_position().iter().map(|&r| weights.row(r).to_vec()).collect();
            Matrix::from_rows(&rows)
        }
        _ => unreachable!(),
    }
}

/// Word-by-word embedding of `seq_a` given `seq_b`, with its matching features.
pub fn text_embed_ww(
    seq_a: &TextSequence,
    seq_b: &TextSequence,
    params: &ModelParams,
) -> Result<(Vec<f64>, MatchingFeatures)> {
    let a = embed(params, seq_a, None)?;
    let b = embed(params, seq_b, None)?;
    let side = encode_word(params, &a.x, &b.x, None)?;
    match side.cache {
        SideCache::Word {
            attention, matching, ..
        } => {
            // Back to the words' original positions.
            let (ra, rb) = (a.rows_by_position(), b.rows_by_position());
            let canonical = matching.transpose();
            let mut vectors = Matrix::zeros(canonical.rows(), canonical.cols());
            for (p, &r) in ra.iter().enumerate() {
                vectors.row_mut(p).copy_from_slice(canonical.row(r));
            }
            let attention = Matrix::from_rows(
                &rb.iter()
                    .map(|&rb| ra.iter().map(|&r| attention.get(rb, r)).collect())
                    .collect::<Vec<Vec<f64>>>(),
            )?;
            let norms = (0..vectors.rows())
                .map(|i| dot(vectors.row(i), vectors.row(i)).sqrt())
                .collect();
            Ok((
                side.h,
                MatchingFeatures {
                    vectors,
                    norms,
                    attention,
                },
            ))
        }
        _ => unreachable!(),
    }
}

/// Context-aware textual embedding `t_{v|context}` under the model's mode.
pub fn text_embedding(params: &ModelParams, corpus: &Corpus, v: usize, context: usize) -> Result<Vec<f64>> {
    check_vertex(params, corpus, v)?;
    check_vertex(params, corpus, context)?;
    let a = corpus.sequence(v);
    match params.config.mode {
        Mode::Wane => text_embed_avg(a, params),
        Mode::WaneWc => text_embed_wc(a, corpus.sequence(context), params),
        Mode::WaneWw => Ok(text_embed_ww(a, corpus.sequence(context), params)?.0),
    }
}

/// Context-aware embeddings of both ends of a vertex pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairEmbedding {
    pub h_s_i: Vec<f64>,
    pub h_s_j: Vec<f64>,
    pub h_t_i: Vec<f64>,
    pub h_t_j: Vec<f64>,
}

impl PairEmbedding {
    pub fn h_i(&self) -> Vec<f64> {
        [self.h_s_i.as_slice(), &self.h_t_i].concat()
    }

    pub fn h_j(&self) -> Vec<f64> {
        [self.h_s_j.as_slice(), &self.h_t_j].concat()
    }
}

pub fn pair_embedding(params: &ModelParams, corpus: &Corpus, i: usize, j: usize) -> Result<PairEmbedding> {
    check_vertex(params, corpus, i)?;
    check_vertex(params, corpus, j)?;
    let a = embed(params, corpus.sequence(i), None)?;
    let b = embed(params, corpus.sequence(j), None)?;
    let side_i = encode_side(params, &a.x, &b.x, None)?;
    let reuse = match &side_i.cache {
        SideCache::Word { affinity, .. } => Some(affinity.transpose()),
        _ => None,
    };
    let side_j = encode_side(params, &b.x, &a.x, reuse)?;
    Ok(PairEmbedding {
        h_s_i: params.structural.row(i).to_vec(),
        h_s_j: params.structural.row(j).to_vec(),
        h_t_i: side_i.h,
        h_t_j: side_j.h,
    })
}

/// Exact `exp(h_j.h_i) / sum_k exp(h_j.h_k)` over the rows of `table`.
/// A test oracle for the sampled objective; never used in training.
pub fn softmax_conditional(i: usize, j: usize, table: &Matrix) -> Result<f64> {
    if i >= table.rows() || j >= table.rows() {
        return Err(Error::Invalid(format!("vertex outside 0..{}", table.rows())));
    }
    let anchor = table.row(j);
    let logits: Vec<f64> = (0..table.rows()).map(|k| dot(anchor, table.row(k))).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    Ok((logits[i] - max).exp() / total)
}

/// Negative vertices for each of the four loss terms of one ordered pair:
/// structure|structure, text|text, text|structure, structure|text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Negatives {
    pub per_term: [Vec<usize>; 4],
}

impl Negatives {
    /// The same set for every term.
    pub fn shared(vertices: Vec<usize>) -> Self {
        Self {
            per_term: [vertices.clone(), vertices.clone(), vertices.clone(), vertices],
        }
    }

    pub fn all(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_term.iter().flatten().copied()
    }
}

/// One ordered pair `(target | anchor)` with weight and negatives.
#[derive(Clone, Debug)]
pub struct DirectedPair<'a> {
    pub target: usize,
    pub anchor: usize,
    pub weight: f64,
    pub negatives: &'a Negatives,
}

#[derive(Clone, Copy)]
enum EmbRef {
    Structural(usize),
    Text(usize),
}

/// Shares word matrices and encodings across the ordered pairs of one
/// evaluation, then runs a single backward pass per encoding.
struct Workspace<'a> {
    params: &'a ModelParams,
    corpus: &'a Corpus,
    masks: &'a DropoutMasks,
    vertices: Vec<usize>,
    embedded: Vec<Embedded<'a>>,
    text_keys: Vec<(usize, usize)>,
    sides: Vec<Side>,
    side_grads: Vec<Vec<f64>>,
}

impl<'a> Workspace<'a> {
    fn new(params: &'a ModelParams, corpus: &'a Corpus, masks: &'a DropoutMasks) -> Self {
        Self {
            params,
            corpus,
            masks,
            vertices: Vec::new(),
            embedded: Vec::new(),
            text_keys: Vec::new(),
            sides: Vec::new(),
            side_grads: Vec::new(),
        }
    }

    fn embedded_index(&mut self, v: usize) -> Result<usize> {
        if let Some(p) = self.vertices.iter().position(|&u| u == v) {
            return Ok(p);
        }
        let e = embed(self.params, self.corpus.sequence(v), self.masks.get(v))?;
        self.vertices.push(v);
        self.embedded.push(e);
        Ok(self.vertices.len() - 1)
    }

    /// Index of `t_{v|context}`, encoding it on first use.
    fn text(&mut self, v: usize, context: usize) -> Result<usize> {
        if let Some(p) = self.text_keys.iter().position(|&k| k == (v, context)) {
            return Ok(p);
        }
        let a = self.embedded_index(v)?;
        let b = self.embedded_index(context)?;
        let reuse = self
            .text_keys
            .iter()
            .position(|&k| k == (context, v))
            .and_then(|p| match &self.sides[p].cache {
                SideCache::Word { affinity, .. } => Some(affinity.transpose()),
                _ => None,
            });
        let side = encode_side(self.params, &self.embedded[a].x, &self.embedded[b].x, reuse)?;
        self.side_grads.push(vec![0.0; side.h.len()]);
        self.sides.push(side);
        self.text_keys.push((v, context));
        Ok(self.text_keys.len() - 1)
    }

    fn vector(&self, e: EmbRef) -> &[f64] {
        match e {
            EmbRef::Structural(v) => self.params.structural.row(v),
            EmbRef::Text(t) => &self.sides[t].h,
        }
    }

    fn add_grad(&mut self, e: EmbRef, g: &[f64], scale: f64, grads: &mut Gradients) {
        match e {
            EmbRef::Structural(v) => grads.structural.add(v, g, scale),
            EmbRef::Text(t) => axpy(scale, g, &mut self.side_grads[t]),
        }
    }

    /// Adds `-coef * w * l(a | b)` and its gradients.
    fn term(
        &mut self,
        coef: f64,
        a: EmbRef,
        b: EmbRef,
        negatives: &[EmbRef],
        grads: &mut Gradients,
    ) -> f64 {
        let b_vec = self.vector(b).to_vec();
        let a_vec = self.vector(a).to_vec();
        let x = dot(&b_vec, &a_vec);
        let mut loss = -coef * log_sigmoid(x);
        let c = -coef * sigmoid(-x);
        let mut g_b = vec![0.0; b_vec.len()];
        axpy(c, &a_vec, &mut g_b);
        self.add_grad(a, &b_vec, c, grads);
        for &n in negatives {
            let n_vec = self.vector(n).to_vec();
            let x = dot(&b_vec, &n_vec);
            loss -= coef * log_sigmoid(-x);
            let c = coef * sigmoid(x);
            axpy(c, &n_vec, &mut g_b);
            self.add_grad(n, &b_vec, c, grads);
        }
        self.add_grad(b, &g_b, 1.0, grads);
        loss
    }

    fn directed(&mut self, pair: &DirectedPair<'_>, grads: &mut Gradients) -> Result<f64> {
        let (i, j, w) = (pair.target, pair.anchor, pair.weight);
        let alphas = self.params.config.alphas;
        let [n_ss, n_tt, n_ts, n_st] = &pair.negatives.per_term;
        let s = |v: &Vec<usize>| v.iter().map(|&k| EmbRef::Structural(k)).collect::<Vec<_>>();
        let mut loss = self.term(w, EmbRef::Structural(i), EmbRef::Structural(j), &s(n_ss), grads);
        if !self.params.config.uses_text() {
            return Ok(loss);
        }
        let t_i = EmbRef::Text(self.text(i, j)?);
        let t_j = EmbRef::Text(self.text(j, i)?);
        let mut text_negs = |set: &Vec<usize>| -> Result<Vec<EmbRef>> {
            set.iter().map(|&k| Ok(EmbRef::Text(self.text(k, j)?))).collect()
        };
        let n_tt = text_negs(n_tt)?;
        let n_ts = text_negs(n_ts)?;
        if alphas[0] != 0.0 {
            loss += self.term(w * alphas[0], t_i, t_j, &n_tt, grads);
        }
        if alphas[1] != 0.0 {
            loss += self.term(w * alphas[1], t_i, EmbRef::Structural(j), &n_ts, grads);
        }
        if alphas[2] != 0.0 {
            loss += self.term(w * alphas[2], EmbRef::Structural(i), t_j, &s(n_st), grads);
        }
        Ok(loss)
    }

    fn backward(self, grads: &mut Gradients) -> Result<()> {
        let mut gx: Vec<Matrix> = self
            .embedded
            .iter()
            .map(|e| Matrix::zeros(e.x.rows(), e.x.cols()))
            .collect();
        for (p, &(v, context)) in self.text_keys.iter().enumerate() {
            let gh = &self.side_grads[p];
            if gh.iter().all(|&g| g == 0.0) {
                continue;
            }
            let a = self.vertices.iter().position(|&u| u == v).expect("embedded");
            let b = self.vertices.iter().position(|&u| u == context).expect("embedded");
            let (xa, xb) = (&self.embedded[a].x, &self.embedded[b].x);
            if a == b {
                let mut ga = Matrix::zeros(xa.rows(), xa.cols());
                let mut gb = Matrix::zeros(xb.rows(), xb.cols());
                backward_side(self.params, xa, xb, &self.sides[p], gh, &mut ga, &mut gb, grads)?;
                gx[a].add_scaled(&ga, 1.0);
                gx[a].add_scaled(&gb, 1.0);
            } else {
                let (ga, gb) = two_mut(&mut gx, a, b);
                backward_side(self.params, xa, xb, &self.sides[p], gh, ga, gb, grads)?;
            }
        }
        for (e, g) in self.embedded.iter().zip(&gx) {
            scatter(&mut grads.words, e, g);
        }
        Ok(())
    }
}

fn two_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = v.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

fn validate_pair(params: &ModelParams, corpus: &Corpus, pair: &DirectedPair<'_>) -> Result<()> {
    let (i, j) = (pair.target, pair.anchor);
    check_vertex(params, corpus, i)?;
    check_vertex(params, corpus, j)?;
    if i == j {
        return Err(Error::Invalid(format!("pair ({i}, {j}) is a self-loop")));
    }
    for (t, set) in pair.negatives.per_term.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::Invalid(format!("loss term {t} has no negative samples")));
        }
    }
    for k in pair.negatives.all() {
        check_vertex(params, corpus, k)?;
        if k == i || k == j {
            return Err(Error::Invalid(format!(
                "negative {k} coincides with the pair ({i}, {j})"
            )));
        }
    }
    if !(pair.weight > 0.0 && pair.weight.is_finite()) {
        return Err(Error::Invalid(format!("edge weight {} must be positive", pair.weight)));
    }
    Ok(())
}

/// Negated sampled log-likelihood of the ordered pairs, with gradients added
/// into `grads`. Pairs sharing vertices share their word matrices (and dropout
/// masks) and any identical context-aware encoding.
pub fn pairs_loss(
    params: &ModelParams,
    corpus: &Corpus,
    pairs: &[DirectedPair<'_>],
    masks: &DropoutMasks,
    grads: &mut Gradients,
) -> Result<f64> {
    for pair in pairs {
        validate_pair(params, corpus, pair)?;
    }
    let mut ws = Workspace::new(params, corpus, masks);
    let mut loss = 0.0;
    for pair in pairs {
        loss += ws.directed(pair, grads)?;
    }
    ws.backward(grads)?;
    Ok(loss)
}

/// Loss of the ordered pair `(i | j)`; gradients are added into `grads`.
#[allow(clippy::too_many_arguments)]
pub fn pair_loss(
    params: &ModelParams,
    corpus: &Corpus,
    i: usize,
    j: usize,
    weight: f64,
    negatives: &Negatives,
    masks: &DropoutMasks,
    grads: &mut Gradients,
) -> Result<f64> {
    let pair = DirectedPair {
        target: i,
        anchor: j,
        weight,
        negatives,
    };
    pairs_loss(params, corpus, &[pair], masks, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus::from_texts(texts, 300).unwrap()
    }

    fn config(mode: Mode, align: Align, aggregate: Aggregate, word_dim: usize) -> ModelConfig {
        ModelConfig {
            mode,
            align,
            aggregate,
            word_dim,
            alphas: [1.0; 3],
        }
    }

    fn random_params(c: ModelConfig, n: usize, v: usize, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::init(c, n, v, &mut rng).unwrap();
        // Larger than the default init so the nonlinearities are exercised.
        for t in [&mut p.structural, &mut p.words, &mut p.w1, &mut p.w2] {
            t.scale(4.0);
        }
        p
    }

    #[test]
    fn dimensions_follow_alignment() {
        let c = ModelConfig::with_structural_dim(Mode::WaneWw, Align::SubMul, Aggregate::Max, 100).unwrap();
        assert_eq!((c.word_dim, c.text_dim(), c.embedding_dim()), (50, 100, 200));
        let c = ModelConfig::with_structural_dim(Mode::WaneWw, Align::Sub, Aggregate::Max, 100).unwrap();
        assert_eq!(c.word_dim, 100);
        let c = ModelConfig::with_structural_dim(Mode::WaneWc, Align::SubMul, Aggregate::Max, 100).unwrap();
        assert_eq!(c.word_dim, 100);
        assert!(ModelConfig::with_structural_dim(Mode::WaneWw, Align::SubMul, Aggregate::Max, 7).is_err());
    }

    #[test]
    fn parse_enums() {
        assert_eq!("wane-ww".parse::<Mode>().unwrap(), Mode::WaneWw);
        assert_eq!("submult".parse::<Align>().unwrap(), Align::SubMul);
        assert_eq!("mean".parse::<Aggregate>().unwrap(), Aggregate::Mean);
        assert!("cnn".parse::<Aggregate>().is_err());
    }

    #[test]
    fn average_examples() {
        let c = corpus(&["alpha", "alpha beta", "a b c d"]);
        let mut p = random_params(config(Mode::Wane, Align::Sub, Aggregate::Max, 3), 3, c.vocab.len(), 1);
        let alpha = c.vocab.id("alpha").unwrap();
        assert_eq!(text_embed_avg(c.sequence(0), &p).unwrap(), p.words.row(alpha).to_vec());

        let beta = c.vocab.id("beta").unwrap();
        let neg: Vec<f64> = p.words.row(alpha).iter().map(|x| -x).collect();
        p.words.row_mut(beta).copy_from_slice(&neg);
        assert!(text_embed_avg(c.sequence(1), &p).unwrap().iter().all(|x| x.abs() < 1e-15));

        let got = text_embed_avg(c.sequence(2), &p).unwrap();
        for r in 0..3 {
            let mut s = 0.0;
            for &id in &c.sequence(2).token_ids {
                s += p.words.get(id, r);
            }
            assert!((got[r] - s / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn word_by_context_examples() {
        let c = corpus(&["a b c", "d e", "f"]);
        let mut p = random_params(config(Mode::WaneWc, Align::Sub, Aggregate::Max, 4), 3, c.vocab.len(), 2);
        // Single word: all the attention goes to it.
        let h = text_embed_wc(c.sequence(2), c.sequence(0), &p).unwrap();
        let f = c.vocab.id("f").unwrap();
        for (x, y) in h.iter().zip(p.words.row(f)) {
            assert!((x - y).abs() < 1e-15);
        }
        // Attention columns are distributions.
        let weights = context_attention(c.sequence(0), c.sequence(1), &p).unwrap();
        for col in 0..4 {
            assert!((weights.col(col).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // Zero attention matrices reduce to the plain average, exactly.
        p.w1.fill(0.0);
        p.w2.fill(0.0);
        let wc = text_embed_wc(c.sequence(0), c.sequence(1), &p).unwrap();
        let avg = text_embed_avg(c.sequence(0), &p).unwrap();
        assert_eq!(wc, avg);
    }

    #[test]
    fn word_by_word_examples() {
        let c = corpus(&["a b c", "w", "a"]);
        let p = random_params(config(Mode::WaneWw, Align::SubMul, Aggregate::Max, 3), 3, c.vocab.len(), 3);
        // One-word partner: every attended vector is that word.
        let (_, feats) = text_embed_ww(c.sequence(0), c.sequence(1), &p).unwrap();
        let w = c.vocab.id("w").unwrap();
        for i in 0..3 {
            let x = p.words.row(c.sequence(0).token_ids[i]);
            for r in 0..3 {
                let expected = x[r] - p.words.get(w, r);
                assert!((feats.vectors.get(i, r) - expected).abs() < 1e-15);
            }
        }
        assert_eq!(feats.norms.len(), 3);
        assert_eq!(feats.attention.shape(), (1, 3));

        let sub = random_params(config(Mode::WaneWw, Align::Sub, Aggregate::Max, 3), 3, c.vocab.len(), 3);
        let (h, feats) = text_embed_ww(c.sequence(2), c.sequence(2), &sub).unwrap();
        assert!(h.iter().all(|&x| x == 0.0));
        assert_eq!(feats.norms, vec![0.0]);
    }

    #[test]
    fn zero_parameter_loss_is_eight_ln_two() {
        let c = corpus(&["a b", "c", "d e f"]);
        let p = ModelParams::zeros(config(Mode::WaneWw, Align::SubMul, Aggregate::Max, 2), 3, c.vocab.len()).unwrap();
        let mut g = Gradients::for_params(&p);
        let negs = Negatives::shared(vec![2]);
        let loss = pair_loss(&p, &c, 0, 1, 1.0, &negs, &DropoutMasks::none(), &mut g).unwrap();
        assert!((loss - 8.0 * 2f64.ln()).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn structure_only_has_no_text_gradient() {
        let c = corpus(&["a b", "c", "d e f"]);
        let mut cfg = config(Mode::WaneWw, Align::SubMul, Aggregate::Max, 2);
        cfg.alphas = [0.0; 3];
        let p = random_params(cfg, 3, c.vocab.len(), 4);
        let mut g = Gradients::for_params(&p);
        let negs = Negatives::shared(vec![2]);
        let loss = pair_loss(&p, &c, 0, 1, 1.0, &negs, &DropoutMasks::none(), &mut g).unwrap();
        assert!(g.words.touched().is_empty());
        let (si, sj, sk) = (p.structural.row(0), p.structural.row(1), p.structural.row(2));
        let expected = -(log_sigmoid(dot(sj, si)) + log_sigmoid(-dot(sj, sk)));
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn pair_loss_rejects_bad_negatives() {
        let c = corpus(&["a", "b", "c"]);
        let p = random_params(config(Mode::Wane, Align::Sub, Aggregate::Max, 2), 3, c.vocab.len(), 5);
        let mut g = Gradients::for_params(&p);
        let none = DropoutMasks::none();
        assert!(pair_loss(&p, &c, 0, 1, 1.0, &Negatives::shared(vec![]), &none, &mut g).is_err());
        assert!(pair_loss(&p, &c, 0, 1, 1.0, &Negatives::shared(vec![1]), &none, &mut g).is_err());
        assert!(pair_loss(&p, &c, 0, 0, 1.0, &Negatives::shared(vec![2]), &none, &mut g).is_err());
    }

    #[test]
    fn softmax_conditional_examples() {
        let uniform = Matrix::from_rows(&vec![vec![0.3, 0.1]; 4]).unwrap();
        assert!((softmax_conditional(2, 0, &uniform).unwrap() - 0.25).abs() < 1e-15);

        // h_1 = (sqrt(ln 3), 0), h_0 = (0, 1): logits against h_1 are [0, ln 3].
        let t = Matrix::from_rows(&[vec![0.0, 1.0], vec![3f64.ln().sqrt(), 0.0]]).unwrap();
        assert!((softmax_conditional(0, 1, &t).unwrap() - 0.25).abs() < 1e-15);
        assert!((softmax_conditional(1, 1, &t).unwrap() - 0.75).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let big = uniform_table(&mut rng);
        let total: f64 = (0..big.rows()).map(|k| softmax_conditional(k, 3, &big).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    fn uniform_table(rng: &mut ChaCha8Rng) -> Matrix {
        let mut m = uniform(7, 5, rng);
        m.scale(40.0);
        m
    }
}
