//! Dense `f64` tensors, activations, pooling with gradient routing and a
//! central-difference gradient checker.
//!
//! Storage is row-major with an explicit shape. There is no broadcasting:
//! every operation checks shapes and reports a [`TensorError`] on mismatch.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("shape {shape:?} holds {expected} values but {actual} were given")]
    BadLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
}

/// Dense row-major array of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::BadLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a matrix from rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Entries drawn independently from `U[-scale, scale]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], scale: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    /// Row `i` of a matrix (or of the leading axis in general).
    pub fn row(&self, i: usize) -> &[f64] {
        let width = self.data.len() / self.rows().max(1);
        &self.data[i * width..(i + 1) * width]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let width = self.data.len() / self.rows().max(1);
        &mut self.data[i * width..(i + 1) * width]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// `self += scale * other`, shapes must agree.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "add_scaled",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    fn expect_rank(&self, rank: usize, op: &'static str) -> Result<(), TensorError> {
        if self.shape.len() != rank {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: vec![0; rank],
            });
        }
        Ok(())
    }
}

/// Standard matrix product of `a[m×k]` and `b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    a.expect_rank(2, "matmul")?;
    b.expect_rank(2, "matmul")?;
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `qᵀ · w · a` for `q[p]`, `w[p×r]`, `a[r]`.
pub fn bilinear_slice(q: &Tensor, w: &Tensor, a: &Tensor) -> Result<f64, TensorError> {
    w.expect_rank(2, "bilinear_slice")?;
    if q.shape != [w.shape[0]] || a.shape != [w.shape[1]] {
        return Err(TensorError::ShapeMismatch {
            op: "bilinear_slice",
            left: q.shape.clone(),
            right: a.shape.clone(),
        });
    }
    Ok(bilinear(&q.data, &w.data, &a.data))
}

/// Slice-level bilinear form on raw row-major storage.
pub(crate) fn bilinear(q: &[f64], w: &[f64], a: &[f64]) -> f64 {
    let r = a.len();
    q.iter()
        .enumerate()
        .map(|(i, qi)| qi * dot(&w[i * r..(i + 1) * r], a))
        .sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += m · x` where `m` is `rows × x.len()` row-major.
pub(crate) fn matvec_acc(m: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += mᵀ · y` where `m` is `y.len() × out.len()` row-major.
pub(crate) fn matvec_t_acc(m: &[f64], y: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (yi, row) in y.iter().zip(m.chunks_exact(cols)) {
        if *yi == 0.0 {
            continue;
        }
        for (o, mv) in out.iter_mut().zip(row) {
            *o += yi * mv;
        }
    }
}

/// `m += y · xᵀ`.
pub(crate) fn outer_acc(m: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (yi, row) in y.iter().zip(m.chunks_exact_mut(cols)) {
        if *yi == 0.0 {
            continue;
        }
        for (mv, xv) in row.iter_mut().zip(x) {
            *mv += yi * xv;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output `y = f(x)`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn apply(self, x: &Tensor) -> Tensor {
        Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&v| self.eval(v)).collect(),
        }
    }

    /// Elementwise `f'(x)`.
    pub fn derivative(self, x: &Tensor) -> Tensor {
        Tensor {
            shape: x.shape.clone(),
            data: x
                .data
                .iter()
                .map(|&v| self.derivative_from_output(self.eval(v)))
                .collect(),
        }
    }
}

/// Row-wise maximum of a `z×n` matrix with the winning column per row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMax {
    pub values: Tensor,
    pub argmax: Vec<usize>,
    pub cols: usize,
}

impl RowMax {
    /// Routes `grad[i]` to `(i, argmax[i])`; every other entry gets zero.
    pub fn backward(&self, grad: &[f64]) -> Tensor {
        let rows = self.argmax.len();
        let mut out = Tensor::zeros(&[rows, self.cols]);
        for (i, (&j, g)) in self.argmax.iter().zip(grad).enumerate() {
            out.data[i * self.cols + j] = *g;
        }
        out
    }
}

pub fn maxpool_rows(h: &Tensor) -> Result<RowMax, TensorError> {
    h.expect_rank(2, "maxpool_rows")?;
    let (rows, cols) = (h.shape[0], h.shape[1]);
    if cols == 0 {
        return Err(TensorError::Empty { op: "maxpool_rows" });
    }
    let mut values = Vec::with_capacity(rows);
    let mut argmax = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = &h.data[i * cols..(i + 1) * cols];
        let mut best = 0;
        for (j, v) in row.iter().enumerate().skip(1) {
            // strict comparison keeps the first occurrence on ties
            if *v > row[best] {
                best = j;
            }
        }
        values.push(row[best]);
        argmax.push(best);
    }
    Ok(RowMax {
        values: Tensor::vector(values),
        argmax,
        cols,
    })
}

/// Column mean of a `d×n` matrix.
pub fn meanpool_cols(m: &Tensor) -> Result<Tensor, TensorError> {
    m.expect_rank(2, "meanpool_cols")?;
    let (rows, cols) = (m.shape[0], m.shape[1]);
    if cols == 0 || rows == 0 {
        return Err(TensorError::Empty { op: "meanpool_cols" });
    }
    let data = m
        .data
        .chunks_exact(cols)
        .map(|row| row.iter().sum::<f64>() / cols as f64)
        .collect();
    Ok(Tensor::vector(data))
}

/// Gradient of [`meanpool_cols`]: each column receives `grad / n`.
pub fn meanpool_cols_backward(grad: &Tensor, cols: usize) -> Tensor {
    let inv = 1.0 / cols as f64;
    let rows = grad.len();
    let mut out = Tensor::zeros(&[rows, cols]);
    for (i, g) in grad.data.iter().enumerate() {
        out.data[i * cols..(i + 1) * cols].fill(g * inv);
    }
    out
}

/// A collection of named parameter tensors.
///
/// The same type doubles as its own gradient container, so a gradient for
/// `P` is just another `P` whose tensors line up name for name.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn sum_squares(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.sum_squares()).sum()
    }
}

impl ParamSet for Tensor {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("value".to_string(), self)]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("value".to_string(), self)]
    }
}

pub const DEFAULT_GRADCHECK_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupCheck {
    pub name: String,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn max_abs_error(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_abs_error)
            .fold(0.0, f64::max)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("group\tmax_abs_error\tmax_rel_error\tworst_index\n");
        for g in &self.groups {
            out.push_str(&format!(
                "{}\t{:.3e}\t{:.3e}\t{}\n",
                g.name, g.max_abs_error, g.max_rel_error, g.worst_index
            ));
        }
        out
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `loss_fn` at `params`.
///
/// `analytic` must have the same tensor layout as `params`. Every scalar is
/// perturbed by `±epsilon` in turn, so the cost is two loss evaluations per
/// parameter.
pub fn finite_diff_check<P, F>(
    loss_fn: F,
    params: &P,
    analytic: &P,
    epsilon: f64,
) -> Result<GradCheckReport, TensorError>
where
    P: ParamSet + Clone,
    F: Fn(&P) -> f64,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let base = loss_fn(params);
    if !base.is_finite() {
        return Err(TensorError::NonFinite("loss at the base point".into()));
    }
    let analytic_groups: Vec<(String, Vec<f64>)> = analytic
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.data().to_vec()))
        .collect();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    if names.len() != analytic_groups.len() {
        return Err(TensorError::ShapeMismatch {
            op: "finite_diff_check",
            left: vec![names.len()],
            right: vec![analytic_groups.len()],
        });
    }

    let mut probe = params.clone();
    let mut groups = Vec::with_capacity(names.len());
    for (g, (name, analytic_values)) in analytic_groups.iter().enumerate() {
        let mut check = GroupCheck {
            name: name.clone(),
            max_abs_error: 0.0,
            max_rel_error: 0.0,
            worst_index: 0,
        };
        for (k, &a) in analytic_values.iter().enumerate() {
            let original = probe.tensors()[g].1.data()[k];
            set_scalar(&mut probe, g, k, original + epsilon);
            let plus = loss_fn(&probe);
            set_scalar(&mut probe, g, k, original - epsilon);
            let minus = loss_fn(&probe);
            set_scalar(&mut probe, g, k, original);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(TensorError::NonFinite(format!("loss while probing {name}[{k}]")));
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let abs = (a - numeric).abs();
            let rel = relative_error(a, numeric);
            check.max_abs_error = check.max_abs_error.max(abs);
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_index = k;
            }
        }
        groups.push(check);
    }
    Ok(GradCheckReport { groups })
}

fn set_scalar<P: ParamSet>(p: &mut P, group: usize, index: usize, value: f64) {
    let mut tensors = p.tensors_mut();
    tensors[group].1.data_mut()[index] = value;
}
