//! Neural tensor network scoring, classic and multiple-instance.
//!
//! The multiple-instance form scores one query vector `q` (question plus
//! asker) against a bag of answer vectors `a_1 … a_n`:
//!
//! ```text
//! H[i][j] = tanh(qᵀ W⁽ⁱ⁾ a_j)          i = 1..z slices, j = 1..n answers
//! v[i]    = max_j H[i][j]
//! logit   = μᵀ v,   prob = σ(logit)
//! ```
//!
//! Each slice `W⁽ⁱ⁾` is rectangular (`d_q × d_a`) because the query carries
//! the user embedding on top of the question encoding. No bias terms are
//! used in the bag form.

use rand::Rng;

use crate::ingest::Label;
use crate::numerics::{bilinear, dot, matvec_t_acc, maxpool_rows, outer_acc, sigmoid, RowMax, Tensor, TensorError};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Bag-scoring parameters: `W` stored as `[z, d_q, d_a]`, `μ` as `[z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NtnParams {
    pub w: Tensor,
    pub mu: Tensor,
}

impl NtnParams {
    pub fn zeros(query_dim: usize, answer_dim: usize, slices: usize) -> Self {
        Self {
            w: Tensor::zeros(&[slices, query_dim, answer_dim]),
            mu: Tensor::zeros(&[slices]),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(
        query_dim: usize,
        answer_dim: usize,
        slices: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            w: Tensor::uniform(&[slices, query_dim, answer_dim], scale, rng),
            mu: Tensor::uniform(&[slices], scale, rng),
        }
    }

    pub fn slices(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn query_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn answer_dim(&self) -> usize {
        self.w.shape()[2]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.query_dim(), self.answer_dim(), self.slices())
    }

    fn slice(&self, i: usize) -> &[f64] {
        let size = self.query_dim() * self.answer_dim();
        &self.w.data()[i * size..(i + 1) * size]
    }
}

/// Full relation-scoring parameters, including the linear term and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicNtnParams {
    /// `[z, d, d]`
    pub w: Tensor,
    /// `[z, 2d]`
    pub v: Tensor,
    pub b: Tensor,
    pub mu: Tensor,
}

/// `μᵀ tanh(e1ᵀ W e2 + V [e1; e2] + b)`.
pub fn ntn_classic(e1: &Tensor, e2: &Tensor, p: &ClassicNtnParams) -> Result<f64, TensorError> {
    let shape = p.w.shape();
    let (z, d1, d2) = match shape {
        [z, d1, d2] => (*z, *d1, *d2),
        _ => {
            return Err(TensorError::ShapeMismatch {
                op: "ntn_classic",
                left: shape.to_vec(),
                right: vec![0, 0, 0],
            })
        }
    };
    if e1.len() != d1 || e2.len() != d2 || p.v.shape() != [z, d1 + d2] || p.b.len() != z || p.mu.len() != z {
        return Err(TensorError::ShapeMismatch {
            op: "ntn_classic",
            left: vec![e1.len(), e2.len()],
            right: shape.to_vec(),
        });
    }
    let stacked: Vec<f64> = e1.data().iter().chain(e2.data()).copied().collect();
    let size = d1 * d2;
    let mut score = 0.0;
    for i in 0..z {
        let bil = bilinear(e1.data(), &p.w.data()[i * size..(i + 1) * size], e2.data());
        let lin = dot(p.v.row(i), &stacked);
        score += p.mu.data()[i] * (bil + lin + p.b.data()[i]).tanh();
    }
    Ok(score)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagScore {
    /// `z × n` slice activations.
    pub activations: Tensor,
    pub pooled: RowMax,
    pub logit: f64,
    pub prob: f64,
}

impl BagScore {
    pub fn v(&self) -> &[f64] {
        self.pooled.values.data()
    }
}

/// Scores a bag of answers against the query vector.
pub fn score_bag(qu: &Tensor, answers: &[Tensor], p: &NtnParams) -> Result<BagScore, TensorError> {
    if answers.is_empty() {
        return Err(TensorError::Empty { op: "score_bag" });
    }
    if qu.len() != p.query_dim() {
        return Err(TensorError::ShapeMismatch {
            op: "score_bag",
            left: vec![qu.len()],
            right: vec![p.query_dim()],
        });
    }
    if let Some(bad) = answers.iter().find(|a| a.len() != p.answer_dim()) {
        return Err(TensorError::ShapeMismatch {
            op: "score_bag",
            left: bad.shape().to_vec(),
            right: vec![p.answer_dim()],
        });
    }
    let (z, n) = (p.slices(), answers.len());
    let mut h = Tensor::zeros(&[z, n]);
    for i in 0..z {
        // qᵀW⁽ⁱ⁾ is shared by every answer in the bag
        let mut qw = vec![0.0; p.answer_dim()];
        matvec_t_acc(p.slice(i), qu.data(), &mut qw);
        for (j, a) in answers.iter().enumerate() {
            h.data_mut()[i * n + j] = dot(&qw, a.data()).tanh();
        }
    }
    let pooled = maxpool_rows(&h)?;
    let logit = dot(p.mu.data(), pooled.values.data());
    Ok(BagScore {
        activations: h,
        pooled,
        logit,
        prob: sigmoid(logit),
    })
}

/// Gradients of a [`score_bag`] output with respect to its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BagScoreGrads {
    pub qu: Vec<f64>,
    pub answers: Vec<Vec<f64>>,
}

/// Backpropagates `dlogit` through a bag score, accumulating parameter
/// gradients into `grads`. Only the winning answer of each slice receives
/// gradient; the others get exact zeros.
pub fn score_bag_backward(
    qu: &Tensor,
    answers: &[Tensor],
    p: &NtnParams,
    score: &BagScore,
    dlogit: f64,
    grads: &mut NtnParams,
) -> BagScoreGrads {
    let (dq, da) = (p.query_dim(), p.answer_dim());
    let v = score.v();
    for (g, vi) in grads.mu.data_mut().iter_mut().zip(v) {
        *g += dlogit * vi;
    }
    let mut out = BagScoreGrads {
        qu: vec![0.0; dq],
        answers: vec![vec![0.0; da]; answers.len()],
    };
    let size = dq * da;
    for (i, &j) in score.pooled.argmax.iter().enumerate() {
        let hij = v[i];
        let dpre = dlogit * p.mu.data()[i] * (1.0 - hij * hij);
        if dpre == 0.0 {
            continue;
        }
        let slice = p.slice(i);
        let a = answers[j].data();
        // d(qᵀWa)/dq = W a ; d/da = Wᵀ q ; d/dW = q aᵀ
        for (r, row) in slice.chunks_exact(da).enumerate() {
            out.qu[r] += dpre * dot(row, a);
        }
        let scaled_q: Vec<f64> = qu.data().iter().map(|q| dpre * q).collect();
        matvec_t_acc(slice, &scaled_q, &mut out.answers[j]);
        outer_acc(&mut grads.w.data_mut()[i * size..(i + 1) * size], &scaled_q, a);
    }
    out
}

/// `+1` iff `prob >= threshold`.
pub fn predict(prob: f64, threshold: f64) -> Label {
    Label::from_bool(prob >= threshold)
}
