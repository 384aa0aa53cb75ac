//! Plain-loop reference implementations shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use midl::embeddings::{EmbeddingTable, UserTable};
use midl::encoders::{BiLstmEncoder, LstmParams};
use midl::evaluation::ConfusionCounts;
use midl::ingest::{Bag, Label};
use midl::mil_ntn::{ClassicNtnParams, NtnParams};
use midl::numerics::Tensor;
use midl::training::{Dims, ModelParams};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.data()[i * k + p] * b.data()[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

pub fn bilinear(q: &[f64], w: &[f64], a: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..q.len() {
        for j in 0..a.len() {
            s += q[i] * w[i * a.len() + j] * a[j];
        }
    }
    s
}

pub fn ntn_classic(e1: &[f64], e2: &[f64], p: &ClassicNtnParams) -> f64 {
    let (z, d1, d2) = (p.w.shape()[0], e1.len(), e2.len());
    let mut score = 0.0;
    for i in 0..z {
        let slice = &p.w.data()[i * d1 * d2..(i + 1) * d1 * d2];
        let mut pre = bilinear(e1, slice, e2) + p.b.data()[i];
        for k in 0..d1 + d2 {
            let x = if k < d1 { e1[k] } else { e2[k - d1] };
            pre += p.v.data()[i * (d1 + d2) + k] * x;
        }
        score += p.mu.data()[i] * pre.tanh();
    }
    score
}

pub struct BagTrace {
    pub h: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub logit: f64,
    pub prob: f64,
}

pub fn score_bag(qu: &[f64], answers: &[Vec<f64>], p: &NtnParams) -> BagTrace {
    let (z, dq, da) = (p.slices(), p.query_dim(), p.answer_dim());
    let mut h = vec![vec![0.0; answers.len()]; z];
    for i in 0..z {
        let slice = &p.w.data()[i * dq * da..(i + 1) * dq * da];
        for (j, a) in answers.iter().enumerate() {
            h[i][j] = bilinear(qu, slice, a).tanh();
        }
    }
    let v: Vec<f64> = h.iter().map(|row| row_max(row).0).collect();
    let mut logit = 0.0;
    for i in 0..z {
        logit += p.mu.data()[i] * v[i];
    }
    BagTrace {
        h,
        v,
        logit,
        prob: 1.0 / (1.0 + (-logit).exp()),
    }
}

/// Maximum and first index attaining it.
pub fn row_max(row: &[f64]) -> (f64, usize) {
    let mut best = (row[0], 0);
    for (j, &x) in row.iter().enumerate() {
        if x > best.0 {
            best = (x, j);
        }
    }
    best
}

pub fn row_means(m: &Tensor) -> Vec<f64> {
    let (r, c) = (m.rows(), m.cols());
    let mut out = Vec::with_capacity(r);
    for i in 0..r {
        let mut s = 0.0;
        for j in 0..c {
            s += m.data()[i * c + j];
        }
        out.push(s / c as f64);
    }
    out
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gate(w: &Tensor, x: &[f64], g: &Tensor, h: &[f64], b: &Tensor, k: usize) -> f64 {
    let mut s = b.data()[k];
    for (m, xm) in x.iter().enumerate() {
        s += w.data()[k * x.len() + m] * xm;
    }
    for (m, hm) in h.iter().enumerate() {
        s += g.data()[k * h.len() + m] * hm;
    }
    s
}

/// One LSTM step written unit by unit.
pub fn lstm_step(p: &LstmParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let mut c_new = vec![0.0; n];
    for k in 0..n {
        let i = sig(gate(&p.w_i, x, &p.g_i, h, &p.b_i, k));
        let c_hat = gate(&p.w_c, x, &p.g_c, h, &p.b_c, k).tanh();
        let f = sig(gate(&p.w_f, x, &p.g_f, h, &p.b_f, k));
        c_new[k] = i * c_hat + f * c[k];
    }
    let mut h_new = vec![0.0; n];
    for k in 0..n {
        let mut pre = gate(&p.w_o, x, &p.g_o, h, &p.b_o, k);
        for m in 0..n {
            pre += p.v_o.data()[k * n + m] * c_new[m];
        }
        h_new[k] = sig(pre) * c_new[k].tanh();
    }
    (h_new, c_new)
}

/// Hidden states after each input, in input order.
pub fn lstm_run(p: &LstmParams, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = p.hidden();
    let (mut h, mut c) = (vec![0.0; n], vec![0.0; n]);
    let mut out = Vec::new();
    for x in xs {
        (h, c) = lstm_step(p, x, &h, &c);
        out.push(h.clone());
    }
    out
}

fn embed(tokens: &[u32], table: &EmbeddingTable) -> Vec<Vec<f64>> {
    tokens.iter().map(|&t| table.matrix.row(t as usize).to_vec()).collect()
}

pub fn encode_question(enc: &BiLstmEncoder, tokens: &[u32], table: &EmbeddingTable) -> Vec<f64> {
    let xs = embed(tokens, table);
    let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
    let mut out = lstm_run(&enc.forward, &xs).pop().unwrap();
    out.extend(lstm_run(&enc.backward, &rev).pop().unwrap());
    out
}

pub fn encode_answer(enc: &BiLstmEncoder, tokens: &[u32], table: &EmbeddingTable) -> Vec<f64> {
    let xs = embed(tokens, table);
    let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
    let fwd = lstm_run(&enc.forward, &xs);
    let mut bwd = lstm_run(&enc.backward, &rev);
    bwd.reverse();
    let n = enc.hidden();
    let t = tokens.len();
    let mut out = vec![0.0; 2 * n];
    for k in 0..n {
        let (mut sf, mut sb) = (0.0, 0.0);
        for pos in 0..t {
            sf += fwd[pos][k];
            sb += bwd[pos][k];
        }
        out[k] = sf / t as f64;
        out[n + k] = sb / t as f64;
    }
    out
}

pub fn confusion(preds: &[Label], truths: &[Label]) -> ConfusionCounts {
    let count = |p: Label, t: Label| preds.iter().zip(truths).filter(|(a, b)| **a == p && **b == t).count() as u64;
    ConfusionCounts {
        tp: count(Label::Satisfied, Label::Satisfied),
        tn: count(Label::Unsatisfied, Label::Unsatisfied),
        fp: count(Label::Satisfied, Label::Unsatisfied),
        fn_: count(Label::Unsatisfied, Label::Satisfied),
    }
}

/// `(precision, recall, f1, accuracy)` straight from the definitions.
pub fn metric_values(c: &ConfusionCounts) -> (f64, f64, f64, f64) {
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let p = div(tp, tp + fp);
    let r = div(tp, tp + fn_);
    (p, r, div(2.0 * p * r, p + r), div(tp + tn, tp + tn + fp + fn_))
}

pub fn random_labels<R: Rng>(n: usize, rng: &mut R) -> Vec<Label> {
    (0..n).map(|_| Label::from_bool(rng.gen())).collect()
}

pub fn random_text<R: Rng>(rng: &mut R, vocab: usize, max_len: usize) -> Vec<u32> {
    let len = rng.gen_range(1..=max_len);
    (0..len).map(|_| rng.gen_range(2..vocab as u32)).collect()
}

/// Random model over `vocab` words with askers 1..=users.
pub fn random_model<R: Rng>(dims: Dims, vocab: usize, users: u64, scale: f64, rng: &mut R) -> ModelParams {
    let mut words = Tensor::uniform(&[vocab, dims.word], scale, rng);
    words.row_mut(0).fill(0.0);
    let ids: Vec<u64> = (1..=users).collect();
    let table = UserTable::from_parts(Tensor::uniform(&[ids.len() + 1, dims.user], scale, rng), &ids).unwrap();
    ModelParams::init(EmbeddingTable::new(words), table, dims, scale, rng).unwrap()
}

pub fn random_bag<R: Rng>(id: u64, vocab: usize, users: u64, rng: &mut R) -> Bag {
    let n = rng.gen_range(1..=4);
    Bag {
        question_id: id,
        user_id: rng.gen_range(1..=users),
        question: random_text(rng, vocab, 6),
        answers: (0..n).map(|_| random_text(rng, vocab, 6)).collect(),
        label: Label::from_bool(rng.gen()),
    }
}
