//! Dense f64 matrix kernels with hand-derived forward/backward pairs,
//! plus a central-difference gradient checker.
//!
//! Everything here is deliberately small: row-major `Matrix`, the handful
//! of kernels the fusion blocks need, and `grad_check` to verify any
//! composite against finite differences. No graphs, no GPU, no sparsity.

use rand::rngs::StdRng;
use rand::Rng;

use crate::error::{Error, Result};

/// Row-major dense matrix of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from explicit rows; handy in tests and tiny hand cases.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "matmul",
                format!(
                    "{}x{} incompatible with {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_transpose_b(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::dim(
                "matmul_transpose_b",
                format!(
                    "{}x{} incompatible with ({}x{})ᵀ",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn matmul_transpose_a(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::dim(
                "matmul_transpose_a",
                format!(
                    "({}x{})ᵀ incompatible with {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let b_row = other.row(i);
            for (k, &a) in a_row.iter().enumerate() {
                let out_row = &mut out.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }
}

/// A trainable tensor: value and its gradient accumulator, same shape.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Forward/eval switch for stochastic kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `out[r] = input[r]·weight + bias`, one output row per input row.
pub fn affine_forward(input: &Matrix, weight: &Matrix, bias: Option<&[f64]>) -> Result<Matrix> {
    if input.cols() != weight.rows() {
        return Err(Error::dim(
            "affine_forward",
            format!(
                "input {}x{} vs weight {}x{}",
                input.rows(),
                input.cols(),
                weight.rows(),
                weight.cols()
            ),
        ));
    }
    if let Some(b) = bias {
        if b.len() != weight.cols() {
            return Err(Error::dim(
                "affine_forward",
                format!("bias length {} vs output dim {}", b.len(), weight.cols()),
            ));
        }
    }
    let mut out = input.matmul(weight)?;
    if let Some(b) = bias {
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b) {
                *o += bv;
            }
        }
    }
    debug_assert!(out.is_finite());
    Ok(out)
}

/// Gradients of an affine map with respect to its three operands.
#[derive(Debug)]
pub struct AffineGrads {
    pub input: Matrix,
    pub weight: Matrix,
    /// Column sums of the upstream gradient; ignore when the forward ran
    /// without a bias.
    pub bias: Vec<f64>,
}

/// Backward pass of [`affine_forward`].
pub fn affine_backward(upstream: &Matrix, input: &Matrix, weight: &Matrix) -> Result<AffineGrads> {
    if upstream.rows() != input.rows() || upstream.cols() != weight.cols() {
        return Err(Error::dim(
            "affine_backward",
            format!(
                "upstream {}x{} vs input {}x{} and weight {}x{}",
                upstream.rows(),
                upstream.cols(),
                input.rows(),
                input.cols(),
                weight.rows(),
                weight.cols()
            ),
        ));
    }
    let grad_input = upstream.matmul_transpose_b(weight)?;
    let grad_weight = input.matmul_transpose_a(upstream)?;
    let mut grad_bias = vec![0.0; upstream.cols()];
    for r in 0..upstream.rows() {
        for (g, &u) in grad_bias.iter_mut().zip(upstream.row(r)) {
            *g += u;
        }
    }
    Ok(AffineGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}

/// Elementwise tanh.
pub fn tanh_forward(input: &Matrix) -> Matrix {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = v.tanh();
    }
    out
}

/// Backward of tanh given the forward *output*: `upstream ⊙ (1 − out²)`.
pub fn tanh_backward(upstream: &Matrix, output: &Matrix) -> Matrix {
    assert_eq!(upstream.rows(), output.rows());
    assert_eq!(upstream.cols(), output.cols());
    let mut grad = upstream.clone();
    for (g, &o) in grad.data_mut().iter_mut().zip(output.data()) {
        *g *= 1.0 - o * o;
    }
    grad
}

/// Row-wise softmax with row-max subtraction for stability.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Backward of row-wise softmax given the forward output:
/// `grad_z[i] = a[i]·(g[i] − Σ_j a[j]·g[j])` per row.
pub fn softmax_rows_backward(upstream: &Matrix, output: &Matrix) -> Matrix {
    assert_eq!(upstream.rows(), output.rows());
    assert_eq!(upstream.cols(), output.cols());
    let mut grad = Matrix::zeros(upstream.rows(), upstream.cols());
    for r in 0..upstream.rows() {
        let a = output.row(r);
        let g = upstream.row(r);
        let dot: f64 = a.iter().zip(g).map(|(&ai, &gi)| ai * gi).sum();
        for (out, (&ai, &gi)) in grad.row_mut(r).iter_mut().zip(a.iter().zip(g)) {
            *out = ai * (gi - dot);
        }
    }
    grad
}

const DEGENERATE_NORM: f64 = 1e-12;

/// Scale every row to unit Euclidean norm.
pub fn l2_normalize_rows(input: &Matrix) -> Result<Matrix> {
    let mut out = input.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < DEGENERATE_NORM {
            return Err(Error::Degenerate(format!(
                "l2_normalize_rows: row {r} has norm {norm:.3e}"
            )));
        }
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    Ok(out)
}

/// Backward of [`l2_normalize_rows`] given the forward *input*:
/// `grad_x = (g − y·(g·y)) / ‖x‖` per row, with `y = x/‖x‖`.
pub fn l2_normalize_rows_backward(upstream: &Matrix, input: &Matrix) -> Result<Matrix> {
    assert_eq!(upstream.rows(), input.rows());
    assert_eq!(upstream.cols(), input.cols());
    let mut grad = Matrix::zeros(input.rows(), input.cols());
    for r in 0..input.rows() {
        let x = input.row(r);
        let g = upstream.row(r);
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < DEGENERATE_NORM {
            return Err(Error::Degenerate(format!(
                "l2_normalize_rows_backward: row {r} has norm {norm:.3e}"
            )));
        }
        let gy: f64 = g.iter().zip(x).map(|(&gi, &xi)| gi * xi / norm).sum();
        for (out, (&gi, &xi)) in grad.row_mut(r).iter_mut().zip(g.iter().zip(x)) {
            *out = (gi - (xi / norm) * gy) / norm;
        }
    }
    Ok(grad)
}

/// Pairwise dot products `A·Bᵀ` of two unit-row matrices; entries are the
/// cosines of the row pairs.
pub fn cosine_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::dim(
            "cosine_matrix",
            format!("{} vs {} columns", a.cols(), b.cols()),
        ));
    }
    let out = a.matmul_transpose_b(b)?;
    debug_assert!(out.data().iter().all(|v| v.abs() <= 1.0 + 1e-9));
    Ok(out)
}

/// Multiplicative dropout mask: entries are 0 (dropped) or `1/(1−rate)`.
#[derive(Debug, Clone)]
pub struct DropoutMask(Matrix);

/// Inverted dropout. Train mode keeps each entry with probability
/// `1 − rate` and scales survivors by `1/(1−rate)`; eval mode is the
/// identity. Returns the mask for the backward pass when one was drawn.
pub fn dropout_forward(
    input: &Matrix,
    rate: f64,
    mode: Mode,
    rng: &mut StdRng,
) -> Result<(Matrix, Option<DropoutMask>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mut mask = Matrix::zeros(input.rows(), input.cols());
    for m in mask.data_mut() {
        if rng.gen::<f64>() >= rate {
            *m = keep_scale;
        }
    }
    let mut out = input.clone();
    for (o, &m) in out.data_mut().iter_mut().zip(mask.data()) {
        *o *= m;
    }
    Ok((out, Some(DropoutMask(mask))))
}

/// Backward of dropout: multiply by the stored mask.
pub fn dropout_backward(upstream: &Matrix, mask: &DropoutMask) -> Matrix {
    let mut grad = upstream.clone();
    for (g, &m) in grad.data_mut().iter_mut().zip(mask.0.data()) {
        *g *= m;
    }
    grad
}

/// Anything the gradient checker can probe: a deterministic scalar
/// function of a set of parameters, with an analytic backward pass.
pub trait GradCheckTarget {
    /// Zero the gradients, run forward and backward, return the scalar
    /// value. Afterwards every parameter's `grad` holds the analytic
    /// gradient.
    fn loss_and_grads(&mut self) -> Result<f64>;

    /// Forward only, at the current parameter values.
    fn loss(&mut self) -> Result<f64>;

    /// Visit every parameter in a stable order.
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter));
}

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max over all coordinates of `|g_a − g_n| / max(1e-8, |g_a|+|g_n|)`.
    pub max_rel_err: f64,
    /// Parameter name and flat coordinate of the worst disagreement.
    pub worst: Option<(String, usize)>,
    /// Total number of coordinates checked.
    pub coordinates: usize,
}

/// Compare a target's analytic gradients against central finite
/// differences with the given step.
pub fn grad_check<T: GradCheckTarget>(target: &mut T, step: f64) -> Result<GradCheckReport> {
    let base = target.loss_and_grads()?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!(
            "grad_check: loss is non-finite ({base})"
        )));
    }
    // Snapshot names, sizes and analytic grads.
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    target.visit_params(&mut |p| {
        analytic.push((p.name.clone(), p.grad.data().to_vec()));
    });
    for (name, grads) in &analytic {
        if let Some(j) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "grad_check: analytic gradient of {name} is non-finite at coordinate {j}"
            )));
        }
    }

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (pi, (name, grads)) in analytic.iter().enumerate() {
        for j in 0..grads.len() {
            nudge(target, pi, j, step);
            let plus = target.loss()?;
            nudge(target, pi, j, -2.0 * step);
            let minus = target.loss()?;
            nudge(target, pi, j, step);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "grad_check: non-finite loss while probing {name} coordinate {j}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let ga = grads[j];
            let rel = (ga - numeric).abs() / f64::max(1e-8, ga.abs() + numeric.abs());
            report.coordinates += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), j));
            }
        }
    }
    Ok(report)
}

fn nudge<T: GradCheckTarget>(target: &mut T, param_index: usize, coord: usize, delta: f64) {
    let mut idx = 0;
    target.visit_params(&mut |p| {
        if idx == param_index {
            p.value.data_mut()[coord] += delta;
        }
        idx += 1;
    });
}
