//! Word and user embedding tables, and skip-gram pretraining.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ingest::PAD_ID;
use crate::numerics::{sigmoid, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("token id {id} out of range for a table of {rows} rows")]
    OutOfRange { id: usize, rows: usize },
    #[error("skip-gram corpus is empty")]
    EmptyCorpus,
    #[error("duplicate user id {0}")]
    DuplicateUser(u64),
    #[error("invalid embedding configuration: {0}")]
    Config(String),
}

/// `|V| × d_w` lookup table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
}

impl EmbeddingTable {
    pub fn new(matrix: Tensor) -> Self {
        Self { matrix }
    }

    /// word2vec-style init `U[-0.5/d, 0.5/d]`, PAD row zero.
    pub fn init<R: Rng + ?Sized>(vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        let mut matrix = Tensor::uniform(&[vocab_size, dim], 0.5 / dim as f64, rng);
        if vocab_size > PAD_ID as usize {
            matrix.row_mut(PAD_ID as usize).fill(0.0);
        }
        Self { matrix }
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, id: usize) -> Result<&[f64], EmbeddingError> {
        if id >= self.vocab_size() {
            return Err(EmbeddingError::OutOfRange {
                id,
                rows: self.vocab_size(),
            });
        }
        Ok(self.matrix.row(id))
    }

    pub fn lookup(&self, id: u32) -> Result<Tensor, EmbeddingError> {
        Ok(Tensor::vector(self.row(id as usize)?.to_vec()))
    }

    /// Adds `grad` into row `id` of a gradient table shaped like this one.
    pub fn accumulate(grad_table: &mut Tensor, id: usize, grad: &[f64]) {
        for (g, d) in grad_table.row_mut(id).iter_mut().zip(grad) {
            *g += d;
        }
    }

    /// `token v1 v2 ... vd` per line.
    pub fn to_text<'a>(&self, token_of: impl Fn(usize) -> Option<&'a str>) -> String {
        let mut out = String::new();
        for id in 0..self.vocab_size() {
            let token = token_of(id).map_or_else(|| id.to_string(), str::to_string);
            out.push_str(&token);
            for v in self.matrix.row(id) {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// User embeddings. Row 0 is reserved for askers not seen at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct UserTable {
    pub matrix: Tensor,
    rows: BTreeMap<u64, usize>,
}

pub const UNK_USER_ROW: usize = 0;
pub const USER_INIT_SCALE: f64 = 0.08;

impl UserTable {
    pub fn from_parts(matrix: Tensor, user_ids: &[u64]) -> Result<Self, EmbeddingError> {
        if matrix.rows() != user_ids.len() + 1 {
            return Err(EmbeddingError::Config(format!(
                "user table has {} rows for {} users",
                matrix.rows(),
                user_ids.len()
            )));
        }
        let mut rows = BTreeMap::new();
        for (i, &id) in user_ids.iter().enumerate() {
            if rows.insert(id, i + 1).is_some() {
                return Err(EmbeddingError::DuplicateUser(id));
            }
        }
        Ok(Self { matrix, rows })
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Row for `user_id`, [`UNK_USER_ROW`] when unknown.
    pub fn row_of(&self, user_id: u64) -> usize {
        self.rows.get(&user_id).copied().unwrap_or(UNK_USER_ROW)
    }

    pub fn lookup(&self, user_id: u64) -> &[f64] {
        self.matrix.row(self.row_of(user_id))
    }

    pub fn contains(&self, user_id: u64) -> bool {
        self.rows.contains_key(&user_id)
    }

    /// Known user ids in row order.
    pub fn user_ids(&self) -> Vec<u64> {
        let mut ids: Vec<(usize, u64)> = self.rows.iter().map(|(&u, &r)| (r, u)).collect();
        ids.sort_unstable();
        ids.into_iter().map(|(_, u)| u).collect()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            matrix: self.matrix.zeros_like(),
            rows: self.rows.clone(),
        }
    }
}

/// Rows drawn from `U[-0.08, 0.08]`.
pub fn init_user_table(user_ids: &[u64], dim: usize, seed: u64) -> Result<UserTable, EmbeddingError> {
    if dim == 0 {
        return Err(EmbeddingError::Config("user dimension must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrix = Tensor::uniform(&[user_ids.len() + 1, dim], USER_INIT_SCALE, &mut rng);
    UserTable::from_parts(matrix, user_ids)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkipGramConfig {
    pub window: usize,
    pub negative_samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            window: 5,
            negative_samples: 5,
            epochs: 15,
            learning_rate: 0.025,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub table: EmbeddingTable,
    /// Mean negative-sampling loss per (center, context) pair, per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Skip-gram with negative sampling over `corpus`.
///
/// Negatives are drawn from the unigram distribution raised to 0.75. The
/// learning rate decays linearly to `1e-4 ×` its start over the whole run.
/// Returns the center-vector table; the context table is discarded.
pub fn pretrain_skipgram(
    corpus: &[Vec<u32>],
    config: &SkipGramConfig,
    vocab_size: usize,
    dim: usize,
) -> Result<Pretrained, EmbeddingError> {
    if config.window == 0 || config.negative_samples == 0 {
        return Err(EmbeddingError::Config("window and negative_samples must be at least 1".into()));
    }
    let total_tokens: usize = corpus.iter().map(Vec::len).sum();
    if total_tokens == 0 {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut table = EmbeddingTable::init(vocab_size, dim, &mut rng);
    let mut context = Tensor::zeros(&[vocab_size, dim]);

    let mut counts = vec![0u64; vocab_size];
    for &tok in corpus.iter().flatten() {
        let tok = tok as usize;
        if tok >= vocab_size {
            return Err(EmbeddingError::OutOfRange { id: tok, rows: vocab_size });
        }
        counts[tok] += 1;
    }
    let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    let sampler = WeightedIndex::new(&weights).map_err(|e| EmbeddingError::Config(e.to_string()))?;

    let total_steps = (config.epochs * total_tokens).max(1) as f64;
    let mut step = 0usize;
    let mut center_grad = vec![0.0; dim];
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut loss = 0.0;
        let mut pairs = 0usize;
        for sentence in corpus {
            for (pos, &center) in sentence.iter().enumerate() {
                let lr = (config.learning_rate * (1.0 - step as f64 / total_steps))
                    .max(config.learning_rate * 1e-4);
                step += 1;
                let center = center as usize;
                let lo = pos.saturating_sub(config.window);
                let hi = (pos + config.window + 1).min(sentence.len());
                for (ctx_pos, &ctx) in sentence.iter().enumerate().take(hi).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    center_grad.fill(0.0);
                    let v = table.matrix.row(center).to_vec();
                    loss += sgns_update(&v, ctx as usize, true, lr, &mut context, &mut center_grad);
                    for _ in 0..config.negative_samples {
                        let neg = sampler.sample(&mut rng);
                        if neg == ctx as usize {
                            continue;
                        }
                        loss += sgns_update(&v, neg, false, lr, &mut context, &mut center_grad);
                    }
                    for (c, g) in table.matrix.row_mut(center).iter_mut().zip(&center_grad) {
                        *c += g;
                    }
                    pairs += 1;
                }
            }
        }
        epoch_losses.push(if pairs == 0 { 0.0 } else { loss / pairs as f64 });
    }
    Ok(Pretrained { table, epoch_losses })
}

/// One logistic step on `(center, target)`; returns the pair's loss and
/// accumulates the center update into `center_grad`.
fn sgns_update(
    center: &[f64],
    target: usize,
    positive: bool,
    lr: f64,
    context: &mut Tensor,
    center_grad: &mut [f64],
) -> f64 {
    let u = context.row_mut(target);
    let score: f64 = center.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
    let label = if positive { 1.0 } else { 0.0 };
    let p = sigmoid(score);
    let g = lr * (label - p);
    for ((cg, uk), vk) in center_grad.iter_mut().zip(u.iter_mut()).zip(center) {
        *cg += g * *uk;
        *uk += g * vk;
    }
    let prob = if positive { p } else { 1.0 - p };
    -prob.max(1e-12).ln()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
