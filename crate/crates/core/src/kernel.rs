//! Dense numeric primitives with hand-derived backward rules.
//!
//! Every forward op here has a companion `*_backward` that maps the gradient of
//! the op's output to the gradient of its inputs, using only what the forward
//! pass returned (softmax outputs, argmax indices). There is no general tape:
//! the text encoders keep the intermediates they need and chain these rules by
//! hand.
//!
//! Matrices are row-major `f64`.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Elementwise product in place.
    pub fn hadamard_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a *= b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Whether an operand of [`gemm`] is used as stored or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

fn op_shape(m: &Matrix, t: Trans) -> (usize, usize) {
    match t {
        Trans::No => (m.rows, m.cols),
        Trans::Yes => (m.cols, m.rows),
    }
}

fn op_strides(m: &Matrix, t: Trans) -> (isize, isize) {
    match t {
        Trans::No => (m.cols as isize, 1),
        Trans::Yes => (1, m.cols as isize),
    }
}

/// General product `c = alpha * op(a) * op(b) + beta * c`.
pub fn gemm(
    alpha: f64,
    a: &Matrix,
    ta: Trans,
    b: &Matrix,
    tb: Trans,
    beta: f64,
    c: &mut Matrix,
) -> Result<()> {
    let (m, k) = op_shape(a, ta);
    let (k2, n) = op_shape(b, tb);
    if k != k2 || c.shape() != (m, n) {
        return Err(Error::Shape(format!(
            "gemm: {m}x{k} * {k2}x{n} into {}x{}",
            c.rows, c.cols
        )));
    }
    if m == 0 || n == 0 {
        return Ok(());
    }
    if k == 0 {
        c.scale(beta);
        return Ok(());
    }
    let (rsa, csa) = op_strides(a, ta);
    let (rsb, csb) = op_strides(b, tb);
    // SAFETY: shapes and strides were validated above and describe the
    // backing vectors exactly; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
    Ok(())
}

/// `op(a) * op(b)` into a fresh matrix.
pub fn matmul_t(a: &Matrix, ta: Trans, b: &Matrix, tb: Trans) -> Result<Matrix> {
    let (m, _) = op_shape(a, ta);
    let (_, n) = op_shape(b, tb);
    let mut c = Matrix::zeros(m, n);
    gemm(1.0, a, ta, b, tb, 0.0, &mut c)?;
    Ok(c)
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    matmul_t(a, Trans::No, b, Trans::No)
}

/// Gradients of `c = a * b` given `dL/dc`: returns `(dL/da, dL/db)`.
pub fn matmul_backward(a: &Matrix, b: &Matrix, grad_out: &Matrix) -> Result<(Matrix, Matrix)> {
    let ga = matmul_t(grad_out, Trans::No, b, Trans::Yes)?;
    let gb = matmul_t(a, Trans::Yes, grad_out, Trans::No)?;
    Ok((ga, gb))
}

/// Softmax applied independently to every column.
pub fn col_softmax(a: &Matrix) -> Matrix {
    let (rows, cols) = a.shape();
    let mut out = a.clone();
    if rows == 0 {
        return out;
    }
    let mut max = a.row(0).to_vec();
    for r in 1..rows {
        for (m, &x) in max.iter_mut().zip(a.row(r)) {
            if x > *m {
                *m = x;
            }
        }
    }
    let mut sum = vec![0.0; cols];
    for r in 0..rows {
        for ((x, s), m) in out.row_mut(r).iter_mut().zip(sum.iter_mut()).zip(&max) {
            *x = (*x - m).exp();
            *s += *x;
        }
    }
    for r in 0..rows {
        for (x, s) in out.row_mut(r).iter_mut().zip(&sum) {
            *x /= s;
        }
    }
    out
}

/// Jacobian-vector product of [`col_softmax`]: per column,
/// `(g - (g . s) 1) * s` where `s` is the forward output.
pub fn col_softmax_backward(softmax: &Matrix, grad_out: &Matrix) -> Matrix {
    let (rows, cols) = softmax.shape();
    let mut dot = vec![0.0; cols];
    for r in 0..rows {
        for ((d, s), g) in dot.iter_mut().zip(softmax.row(r)).zip(grad_out.row(r)) {
            *d += s * g;
        }
    }
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let (s_row, g_row) = (softmax.row(r), grad_out.row(r));
        for (c, x) in out.row_mut(r).iter_mut().enumerate() {
            *x = (g_row[c] - dot[c]) * s_row[c];
        }
    }
    out
}

/// Row-wise max over the columns of a matrix, with the winning column per row.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxPool {
    pub values: Vec<f64>,
    pub argmax: Vec<usize>,
}

/// Max over columns for each row. Ties resolve to the first column.
pub fn maxpool_cols(m: &Matrix) -> Result<MaxPool> {
    if m.rows == 0 || m.cols == 0 {
        return Err(Error::Shape("max-pool over an empty matrix".into()));
    }
    let mut values = Vec::with_capacity(m.rows);
    let mut argmax = Vec::with_capacity(m.rows);
    for r in 0..m.rows {
        let row = m.row(r);
        let mut best = 0;
        for (c, &x) in row.iter().enumerate().skip(1) {
            if x > row[best] {
                best = c;
            }
        }
        values.push(row[best]);
        argmax.push(best);
    }
    Ok(MaxPool { values, argmax })
}

/// Routes each row's gradient to its argmax column only.
pub fn maxpool_cols_backward(argmax: &[usize], cols: usize, grad_out: &[f64]) -> Matrix {
    let mut g = Matrix::zeros(argmax.len(), cols);
    for (r, (&c, &go)) in argmax.iter().zip(grad_out).enumerate() {
        g.set(r, c, go);
    }
    g
}

/// Row means (mean over columns).
pub fn meanpool_cols(m: &Matrix) -> Result<Vec<f64>> {
    if m.rows == 0 || m.cols == 0 {
        return Err(Error::Shape("mean-pool over an empty matrix".into()));
    }
    let inv = 1.0 / m.cols as f64;
    Ok((0..m.rows)
        .map(|r| m.row(r).iter().sum::<f64>() * inv)
        .collect())
}

pub fn meanpool_cols_backward(rows: usize, cols: usize, grad_out: &[f64]) -> Matrix {
    let mut g = Matrix::zeros(rows, cols);
    let inv = 1.0 / cols as f64;
    for r in 0..rows {
        g.row_mut(r).fill(grad_out[r] * inv);
    }
    g
}

/// Row sums (sum over columns).
pub fn sumpool_cols(m: &Matrix) -> Result<Vec<f64>> {
    if m.rows == 0 || m.cols == 0 {
        return Err(Error::Shape("sum-pool over an empty matrix".into()));
    }
    Ok((0..m.rows).map(|r| m.row(r).iter().sum::<f64>()).collect())
}

pub fn sumpool_cols_backward(rows: usize, cols: usize, grad_out: &[f64]) -> Matrix {
    let mut g = Matrix::zeros(rows, cols);
    for r in 0..rows {
        g.row_mut(r).fill(grad_out[r]);
    }
    g
}

/// Binary elementwise operation used by the alignment functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Sub,
    Mul,
}

pub fn elementwise(a: &[f64], b: &[f64], op: BinaryOp) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "elementwise operands of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(match op {
        BinaryOp::Sub => a.iter().zip(b).map(|(x, y)| x - y).collect(),
        BinaryOp::Mul => a.iter().zip(b).map(|(x, y)| x * y).collect(),
    })
}

/// Returns `(dL/da, dL/db)`.
pub fn elementwise_backward(
    a: &[f64],
    b: &[f64],
    op: BinaryOp,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    match op {
        BinaryOp::Sub => (grad_out.to_vec(), grad_out.iter().map(|g| -g).collect()),
        BinaryOp::Mul => (
            grad_out.iter().zip(b).map(|(g, y)| g * y).collect(),
            grad_out.iter().zip(a).map(|(g, x)| g * x).collect(),
        ),
    }
}

pub fn tanh(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.tanh()).collect()
}

/// Takes the forward output `t = tanh(x)`.
pub fn tanh_backward(t: &[f64], grad_out: &[f64]) -> Vec<f64> {
    t.iter().zip(grad_out).map(|(t, g)| g * (1.0 - t * t)).collect()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_vec(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| sigmoid(x)).collect()
}

/// Takes the forward output `s = sigmoid(x)`.
pub fn sigmoid_backward(s: &[f64], grad_out: &[f64]) -> Vec<f64> {
    s.iter().zip(grad_out).map(|(s, g)| g * s * (1.0 - s)).collect()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln sigmoid(x) = -softplus(-x)`, finite for every finite `x`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += s * x`.
#[inline]
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += s * x;
    }
}
