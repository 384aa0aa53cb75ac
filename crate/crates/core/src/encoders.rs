//! LSTM cell with an output-gate peephole and the two BiLSTM text encoders.
//!
//! Cell equations, with `σ` the logistic function:
//!
//! ```text
//! i_t = σ(W_i x_t + G_i h_{t-1} + b_i)
//! ĉ_t = tanh(W_c x_t + G_c h_{t-1} + b_c)
//! f_t = σ(W_f x_t + G_f h_{t-1} + b_f)
//! c_t = i_t ⊙ ĉ_t + f_t ⊙ c_{t-1}
//! o_t = σ(W_o x_t + G_o h_{t-1} + V_o c_t + b_o)
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! The question encoder emits `[→h_T ; ←h_1]`, the final state of each
//! direction. The answer encoder emits the mean over positions of
//! `[→h_i ; ←h_i]`.

use rand::Rng;

use crate::embeddings::{EmbeddingError, EmbeddingTable};
use crate::numerics::{matvec_acc, matvec_t_acc, outer_acc, sigmoid, Tensor, TensorError};

pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EncoderError {
    #[error("cannot encode an empty token sequence")]
    EmptySequence,
    #[error(transparent)]
    Shape(#[from] TensorError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_i: Tensor,
    pub w_c: Tensor,
    pub w_f: Tensor,
    pub w_o: Tensor,
    pub g_i: Tensor,
    pub g_c: Tensor,
    pub g_f: Tensor,
    pub g_o: Tensor,
    pub v_o: Tensor,
    pub b_i: Tensor,
    pub b_c: Tensor,
    pub b_f: Tensor,
    pub b_o: Tensor,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[hidden, input]);
        let g = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        Self {
            w_i: w(),
            w_c: w(),
            w_f: w(),
            w_o: w(),
            g_i: g(),
            g_c: g(),
            g_f: g(),
            g_o: g(),
            v_o: g(),
            b_i: b(),
            b_c: b(),
            b_f: b(),
            b_o: b(),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(input: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden);
        for (_, t) in p.named_mut() {
            *t = Tensor::uniform(t.shape(), scale, rng);
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.b_i.len()
    }

    pub fn input(&self) -> usize {
        self.w_i.cols()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input(), self.hidden())
    }

    pub fn named(&self) -> [(&'static str, &Tensor); 13] {
        [
            ("w_i", &self.w_i),
            ("w_c", &self.w_c),
            ("w_f", &self.w_f),
            ("w_o", &self.w_o),
            ("g_i", &self.g_i),
            ("g_c", &self.g_c),
            ("g_f", &self.g_f),
            ("g_o", &self.g_o),
            ("v_o", &self.v_o),
            ("b_i", &self.b_i),
            ("b_c", &self.b_c),
            ("b_f", &self.b_f),
            ("b_o", &self.b_o),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Tensor); 13] {
        [
            ("w_i", &mut self.w_i),
            ("w_c", &mut self.w_c),
            ("w_f", &mut self.w_f),
            ("w_o", &mut self.w_o),
            ("g_i", &mut self.g_i),
            ("g_c", &mut self.g_c),
            ("g_f", &mut self.g_f),
            ("g_o", &mut self.g_o),
            ("v_o", &mut self.v_o),
            ("b_i", &mut self.b_i),
            ("b_c", &mut self.b_c),
            ("b_f", &mut self.b_f),
            ("b_o", &mut self.b_o),
        ]
    }

    fn check(&self, x: usize, h: usize, c: usize) -> Result<(), TensorError> {
        if x != self.input() || h != self.hidden() || c != self.hidden() {
            return Err(TensorError::ShapeMismatch {
                op: "lstm_step",
                left: vec![self.input(), self.hidden()],
                right: vec![x, h],
            });
        }
        Ok(())
    }
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    c_hat: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

fn affine(w: &Tensor, x: &[f64], g: &Tensor, h: &[f64], b: &Tensor) -> Vec<f64> {
    let mut out = b.data().to_vec();
    matvec_acc(w.data(), x, &mut out);
    matvec_acc(g.data(), h, &mut out);
    out
}

fn step_cached(p: &LstmParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
    let mut i = affine(&p.w_i, x, &p.g_i, h_prev, &p.b_i);
    i.iter_mut().for_each(|v| *v = sigmoid(*v));
    let mut c_hat = affine(&p.w_c, x, &p.g_c, h_prev, &p.b_c);
    c_hat.iter_mut().for_each(|v| *v = v.tanh());
    let mut f = affine(&p.w_f, x, &p.g_f, h_prev, &p.b_f);
    f.iter_mut().for_each(|v| *v = sigmoid(*v));
    let c: Vec<f64> = (0..i.len())
        .map(|k| i[k] * c_hat[k] + f[k] * c_prev[k])
        .collect();
    let mut o = affine(&p.w_o, x, &p.g_o, h_prev, &p.b_o);
    matvec_acc(p.v_o.data(), &c, &mut o);
    o.iter_mut().for_each(|v| *v = sigmoid(*v));
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();
    StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        c_hat,
        f,
        o,
        c,
        tanh_c,
        h,
    }
}

/// One LSTM step, returning `(h_t, c_t)`.
pub fn lstm_step(
    p: &LstmParams,
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
) -> Result<(Tensor, Tensor), EncoderError> {
    p.check(x.len(), h_prev.len(), c_prev.len())?;
    let s = step_cached(p, x.data(), h_prev.data(), c_prev.data());
    Ok((Tensor::vector(s.h), Tensor::vector(s.c)))
}

/// Backward through one step. `dh`/`dc` are the total gradients reaching
/// `h_t`/`c_t`; returns `(dx, dh_prev, dc_prev)`.
fn step_backward(
    p: &LstmParams,
    s: &StepCache,
    dh: &[f64],
    dc_next: &[f64],
    grads: &mut LstmParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = s.h.len();
    let mut da_o = vec![0.0; n];
    let mut dc = dc_next.to_vec();
    for k in 0..n {
        da_o[k] = dh[k] * s.tanh_c[k] * s.o[k] * (1.0 - s.o[k]);
        dc[k] += dh[k] * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
    }
    // peephole: o_t reads the new cell state
    matvec_t_acc(p.v_o.data(), &da_o, &mut dc);
    outer_acc(grads.v_o.data_mut(), &da_o, &s.c);

    let mut da_i = vec![0.0; n];
    let mut da_c = vec![0.0; n];
    let mut da_f = vec![0.0; n];
    let mut dc_prev = vec![0.0; n];
    for k in 0..n {
        da_i[k] = dc[k] * s.c_hat[k] * s.i[k] * (1.0 - s.i[k]);
        da_c[k] = dc[k] * s.i[k] * (1.0 - s.c_hat[k] * s.c_hat[k]);
        da_f[k] = dc[k] * s.c_prev[k] * s.f[k] * (1.0 - s.f[k]);
        dc_prev[k] = dc[k] * s.f[k];
    }

    let mut dx = vec![0.0; s.x.len()];
    let mut dh_prev = vec![0.0; n];
    let gates: [(&[f64], &Tensor, &Tensor); 4] = [
        (&da_i, &p.w_i, &p.g_i),
        (&da_c, &p.w_c, &p.g_c),
        (&da_f, &p.w_f, &p.g_f),
        (&da_o, &p.w_o, &p.g_o),
    ];
    for (da, w, g) in gates {
        matvec_t_acc(w.data(), da, &mut dx);
        matvec_t_acc(g.data(), da, &mut dh_prev);
    }
    let slots = [
        (&da_i, &mut grads.w_i, &mut grads.g_i, &mut grads.b_i),
        (&da_c, &mut grads.w_c, &mut grads.g_c, &mut grads.b_c),
        (&da_f, &mut grads.w_f, &mut grads.g_f, &mut grads.b_f),
        (&da_o, &mut grads.w_o, &mut grads.g_o, &mut grads.b_o),
    ];
    for (da, w, g, b) in slots {
        outer_acc(w.data_mut(), da, &s.x);
        outer_acc(g.data_mut(), da, &s.h_prev);
        for (bv, d) in b.data_mut().iter_mut().zip(da.iter()) {
            *bv += d;
        }
    }
    (dx, dh_prev, dc_prev)
}

/// Runs `p` over `inputs` in order from zero states.
fn run(p: &LstmParams, inputs: &[&[f64]]) -> Vec<StepCache> {
    let n = p.hidden();
    let mut h = vec![0.0; n];
    let mut c = vec![0.0; n];
    let mut steps = Vec::with_capacity(inputs.len());
    for x in inputs {
        let s = step_cached(p, x, &h, &c);
        h.clone_from(&s.h);
        c.clone_from(&s.c);
        steps.push(s);
    }
    steps
}

/// Backpropagates per-step hidden-state gradients through a run, returning
/// the gradient for each input in run order.
fn run_backward(
    p: &LstmParams,
    steps: &[StepCache],
    dhs: &[Vec<f64>],
    grads: &mut LstmParams,
) -> Vec<Vec<f64>> {
    let n = p.hidden();
    let mut dh_carry = vec![0.0; n];
    let mut dc_carry = vec![0.0; n];
    let mut dxs = vec![Vec::new(); steps.len()];
    for t in (0..steps.len()).rev() {
        let dh: Vec<f64> = dh_carry.iter().zip(&dhs[t]).map(|(a, b)| a + b).collect();
        let (dx, dh_prev, dc_prev) = step_backward(p, &steps[t], &dh, &dc_carry, grads);
        dxs[t] = dx;
        dh_carry = dh_prev;
        dc_carry = dc_prev;
    }
    dxs
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmEncoder {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

/// Forward activations of a BiLSTM over one sequence.
#[derive(Debug, Clone)]
pub struct BiTrace {
    tokens: Vec<u32>,
    fwd: Vec<StepCache>,
    /// Backward-direction steps in run order, i.e. position `T-1` first.
    bwd: Vec<StepCache>,
}

impl BiLstmEncoder {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            forward: LstmParams::zeros(input, hidden),
            backward: LstmParams::zeros(input, hidden),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(input: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            forward: LstmParams::uniform(input, hidden, scale, rng),
            backward: LstmParams::uniform(input, hidden, scale, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.forward.input(), self.hidden())
    }

    fn trace(&self, tokens: &[u32], table: &EmbeddingTable) -> Result<BiTrace, EncoderError> {
        if tokens.is_empty() {
            return Err(EncoderError::EmptySequence);
        }
        if table.dim() != self.forward.input() {
            return Err(TensorError::ShapeMismatch {
                op: "encode",
                left: vec![table.dim()],
                right: vec![self.forward.input()],
            }
            .into());
        }
        let rows: Vec<&[f64]> = tokens
            .iter()
            .map(|&t| table.row(t as usize))
            .collect::<Result<_, _>>()?;
        let reversed: Vec<&[f64]> = rows.iter().rev().copied().collect();
        Ok(BiTrace {
            tokens: tokens.to_vec(),
            fwd: run(&self.forward, &rows),
            bwd: run(&self.backward, &reversed),
        })
    }

    /// `[→h_T ; ←h_1]`.
    pub fn encode_question(&self, tokens: &[u32], table: &EmbeddingTable) -> Result<Tensor, EncoderError> {
        Ok(self.trace_question(tokens, table)?.0)
    }

    /// Mean over positions of `[→h_i ; ←h_i]`.
    pub fn encode_answer(&self, tokens: &[u32], table: &EmbeddingTable) -> Result<Tensor, EncoderError> {
        Ok(self.trace_answer(tokens, table)?.0)
    }

    pub fn trace_question(
        &self,
        tokens: &[u32],
        table: &EmbeddingTable,
    ) -> Result<(Tensor, BiTrace), EncoderError> {
        let trace = self.trace(tokens, table)?;
        let mut out = trace.fwd.last().expect("nonempty").h.clone();
        out.extend_from_slice(&trace.bwd.last().expect("nonempty").h);
        Ok((Tensor::vector(out), trace))
    }

    pub fn trace_answer(
        &self,
        tokens: &[u32],
        table: &EmbeddingTable,
    ) -> Result<(Tensor, BiTrace), EncoderError> {
        let trace = self.trace(tokens, table)?;
        let n = self.hidden();
        let len = tokens.len();
        let inv = 1.0 / len as f64;
        let mut out = vec![0.0; 2 * n];
        for pos in 0..len {
            let f = &trace.fwd[pos].h;
            let b = &trace.bwd[len - 1 - pos].h;
            for k in 0..n {
                out[k] += f[k] * inv;
                out[n + k] += b[k] * inv;
            }
        }
        Ok((Tensor::vector(out), trace))
    }

    /// Backward for [`Self::trace_question`].
    pub fn backward_question(
        &self,
        trace: &BiTrace,
        grad: &[f64],
        grads: &mut BiLstmEncoder,
        table_grad: &mut Tensor,
    ) {
        let n = self.hidden();
        let len = trace.tokens.len();
        let mut dfwd = vec![vec![0.0; n]; len];
        let mut dbwd = vec![vec![0.0; n]; len];
        dfwd[len - 1].copy_from_slice(&grad[..n]);
        dbwd[len - 1].copy_from_slice(&grad[n..]);
        self.finish_backward(trace, &dfwd, &dbwd, grads, table_grad);
    }

    /// Backward for [`Self::trace_answer`].
    pub fn backward_answer(
        &self,
        trace: &BiTrace,
        grad: &[f64],
        grads: &mut BiLstmEncoder,
        table_grad: &mut Tensor,
    ) {
        let n = self.hidden();
        let len = trace.tokens.len();
        let inv = 1.0 / len as f64;
        let fwd_share: Vec<f64> = grad[..n].iter().map(|g| g * inv).collect();
        let bwd_share: Vec<f64> = grad[n..].iter().map(|g| g * inv).collect();
        let dfwd = vec![fwd_share; len];
        let dbwd = vec![bwd_share; len];
        self.finish_backward(trace, &dfwd, &dbwd, grads, table_grad);
    }

    /// `dbwd` is indexed in backward-run order.
    fn finish_backward(
        &self,
        trace: &BiTrace,
        dfwd: &[Vec<f64>],
        dbwd: &[Vec<f64>],
        grads: &mut BiLstmEncoder,
        table_grad: &mut Tensor,
    ) {
        let len = trace.tokens.len();
        let dx_f = run_backward(&self.forward, &trace.fwd, dfwd, &mut grads.forward);
        let dx_b = run_backward(&self.backward, &trace.bwd, dbwd, &mut grads.backward);
        for (pos, &tok) in trace.tokens.iter().enumerate() {
            EmbeddingTable::accumulate(table_grad, tok as usize, &dx_f[pos]);
            EmbeddingTable::accumulate(table_grad, tok as usize, &dx_b[len - 1 - pos]);
        }
    }
}

/// `[q ; u]`.
pub fn qu_concat(q: &Tensor, u: &[f64]) -> Tensor {
    let mut data = q.data().to_vec();
    data.extend_from_slice(u);
    Tensor::vector(data)
}

/// Splits a gradient on `[q ; u]` back into its two parts.
pub fn qu_split(grad: &[f64], q_len: usize) -> (&[f64], &[f64]) {
    grad.split_at(q_len)
}
