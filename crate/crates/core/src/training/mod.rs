//! Bag loss, the L2-regularized objective, adaptive updates and the
//! end-to-end training loop.

pub mod checkpoint;
pub mod gradcheck;
mod model;
mod optim;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::embeddings::{init_user_table, pretrain_skipgram, EmbeddingError, EmbeddingTable, SkipGramConfig};
use crate::encoders::EncoderError;
use crate::ingest::{Bag, DatasetSplit, IngestError, Label};
use crate::mil_ntn::predict;
use crate::numerics::{ParamSet, TensorError};

pub use model::{Dims, ModelParams};
pub use optim::{clip_global_norm, AdaGrad, ADAGRAD_EPSILON};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("inconsistent model dimensions: {0}")]
    Dimensions(String),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss on question {0}")]
    NonFiniteLoss(u64),
    #[error("training split is empty")]
    EmptyTrainSet,
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Data(#[from] IngestError),
}

impl TrainError {
    /// Whether the failure is numeric rather than a data or config issue.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            TrainError::NonFiniteGradient(_) | TrainError::NonFiniteLoss(_) | TrainError::Tensor(TensorError::NonFinite(_))
        )
    }
}

pub const PROB_CLAMP: f64 = 1e-12;

/// Cross-entropy of a bag prediction, with `prob` clamped away from 0 and 1.
pub fn bag_loss(prob: f64, label: Label) -> f64 {
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label.is_positive() {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// `loss + λ‖Θ‖²`.
pub fn objective<P: ParamSet>(loss: f64, params: &P, lambda: f64) -> f64 {
    loss + lambda * params.sum_squares()
}

/// Adds the gradient of `λ‖Θ‖²`, i.e. `2λθ`, to `grads`.
pub fn add_l2_grad<P: ParamSet>(grads: &mut P, params: &P, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for ((_, g), (_, p)) in grads.tensors_mut().into_iter().zip(params.tensors()) {
        for (gv, pv) in g.data_mut().iter_mut().zip(p.data()) {
            *gv += 2.0 * lambda * pv;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub rho: f64,
    pub epochs: usize,
    pub seed: u64,
    pub dims: Dims,
    pub clip: Option<f64>,
    pub freeze_embeddings: bool,
    pub patience: usize,
    pub threshold: f64,
    pub init_scale: f64,
    pub skipgram: SkipGramConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            rho: 0.05,
            epochs: 30,
            seed: 1,
            dims: Dims::default(),
            clip: Some(5.0),
            freeze_embeddings: false,
            patience: 5,
            threshold: 0.5,
            init_scale: crate::encoders::INIT_SCALE,
            skipgram: SkipGramConfig::default(),
        }
    }
}

/// Keys accepted by [`TrainConfig::set`], in serialization order.
pub const CONFIG_KEYS: &[&str] = &[
    "lambda",
    "rho",
    "epochs",
    "seed",
    "word_dim",
    "hidden_dim",
    "user_dim",
    "slices",
    "clip",
    "freeze_embeddings",
    "patience",
    "threshold",
    "init_scale",
    "skipgram_window",
    "skipgram_negatives",
    "skipgram_epochs",
    "skipgram_lr",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, TrainError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| TrainError::Config(format!("{key}={value}: {e}")))
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        match key {
            "lambda" => self.lambda = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "word_dim" => self.dims.word = parse(key, value)?,
            "hidden_dim" => self.dims.hidden = parse(key, value)?,
            "user_dim" => self.dims.user = parse(key, value)?,
            "slices" => self.dims.slices = parse(key, value)?,
            "clip" => {
                self.clip = match value.trim() {
                    "none" | "off" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "freeze_embeddings" => self.freeze_embeddings = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "init_scale" => self.init_scale = parse(key, value)?,
            "skipgram_window" => self.skipgram.window = parse(key, value)?,
            "skipgram_negatives" => self.skipgram.negative_samples = parse(key, value)?,
            "skipgram_epochs" => self.skipgram.epochs = parse(key, value)?,
            "skipgram_lr" => self.skipgram.learning_rate = parse(key, value)?,
            other => return Err(TrainError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "lambda" => self.lambda.to_string(),
            "rho" => self.rho.to_string(),
            "epochs" => self.epochs.to_string(),
            "seed" => self.seed.to_string(),
            "word_dim" => self.dims.word.to_string(),
            "hidden_dim" => self.dims.hidden.to_string(),
            "user_dim" => self.dims.user.to_string(),
            "slices" => self.dims.slices.to_string(),
            "clip" => self.clip.map_or_else(|| "none".to_string(), |c| c.to_string()),
            "freeze_embeddings" => self.freeze_embeddings.to_string(),
            "patience" => self.patience.to_string(),
            "threshold" => self.threshold.to_string(),
            "init_scale" => self.init_scale.to_string(),
            "skipgram_window" => self.skipgram.window.to_string(),
            "skipgram_negatives" => self.skipgram.negative_samples.to_string(),
            "skipgram_epochs" => self.skipgram.epochs.to_string(),
            "skipgram_lr" => self.skipgram.learning_rate.to_string(),
            _ => return None,
        })
    }

    /// `key=value` lines in [`CONFIG_KEYS`] order.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).expect("known key"));
        }
        out
    }

    /// Applies `key=value` lines; blank lines and `#` comments are ignored.
    pub fn apply_lines(&mut self, text: &str) -> Result<(), TrainError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let d = self.dims;
        if d.word == 0 || d.hidden == 0 || d.user == 0 || d.slices == 0 {
            return Err(TrainError::Config("all dimensions must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(TrainError::Config("lambda must be >= 0".into()));
        }
        if !(self.rho > 0.0) {
            return Err(TrainError::Config("rho must be > 0".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(TrainError::Config("threshold must lie in (0, 1)".into()));
        }
        if matches!(self.clip, Some(c) if !(c > 0.0)) {
            return Err(TrainError::Config("clip must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

pub fn log_to_tsv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch\ttrain_loss\tval_accuracy\n");
    for e in log {
        let _ = writeln!(out, "{}\t{:.6}\t{:.6}", e.epoch, e.train_loss, e.val_accuracy);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Word embeddings pretrained on every text of `bags`, or the plain init
/// when skip-gram is disabled.
pub fn pretrained_embeddings(bags: &[Bag], config: &TrainConfig, vocab_size: usize) -> Result<EmbeddingTable, TrainError> {
    let sg = SkipGramConfig {
        seed: config.seed.wrapping_add(0x5eed),
        ..config.skipgram
    };
    let corpus: Vec<Vec<u32>> = bags
        .iter()
        .flat_map(|b| std::iter::once(b.question.clone()).chain(b.answers.iter().cloned()))
        .collect();
    if sg.epochs == 0 || corpus.iter().all(Vec::is_empty) {
        let mut rng = ChaCha8Rng::seed_from_u64(sg.seed);
        return Ok(EmbeddingTable::init(vocab_size, config.dims.word, &mut rng));
    }
    Ok(pretrain_skipgram(&corpus, &sg, vocab_size, config.dims.word)?.table)
}

/// Pretrained embeddings, users seen in `train`, random encoders and scorer.
pub fn init_model(train: &[Bag], config: &TrainConfig, vocab_size: usize) -> Result<ModelParams, TrainError> {
    config.validate()?;
    let embeddings = pretrained_embeddings(train, config, vocab_size)?;
    let users: Vec<u64> = train.iter().map(|b| b.user_id).collect::<BTreeSet<_>>().into_iter().collect();
    let users = init_user_table(&users, config.dims.user, config.seed.wrapping_add(0xa5e7))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    ModelParams::init(embeddings, users, config.dims, config.init_scale, &mut rng)
}

/// Objective value and full gradient for one bag.
pub fn bag_objective_and_grad(
    params: &ModelParams,
    bag: &Bag,
    lambda: f64,
) -> Result<(f64, f64, ModelParams), TrainError> {
    let mut grads = params.zeros_like();
    let (loss, prob) = params.loss_and_grad(bag, &mut grads)?;
    add_l2_grad(&mut grads, params, lambda);
    Ok((objective(loss, params, lambda), prob, grads))
}

pub fn accuracy(params: &ModelParams, bags: &[Bag], threshold: f64) -> Result<f64, TrainError> {
    if bags.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for bag in bags {
        if predict(params.score(bag)?.prob, threshold) == bag.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / bags.len() as f64)
}

/// End-to-end training, one bag per update, with early stopping on
/// validation accuracy.
pub fn train(split: &DatasetSplit, config: &TrainConfig, vocab_size: usize) -> Result<TrainOutcome, TrainError> {
    if split.train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    for bag in split.train.iter().chain(&split.validation).chain(&split.test) {
        bag.validate(vocab_size)?;
    }
    let mut params = init_model(&split.train, config, vocab_size)?;
    let mut optimizer = AdaGrad::new(&params, config.rho);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5u64 << 32));

    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::NEG_INFINITY;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for &idx in &order {
            let bag = &split.train[idx];
            let mut grads = params.zeros_like();
            let (loss, _) = params.loss_and_grad(bag, &mut grads)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss(bag.question_id));
            }
            total += loss;
            add_l2_grad(&mut grads, &params, config.lambda);
            if config.freeze_embeddings {
                grads.embeddings.matrix.fill(0.0);
            }
            if let Some(max_norm) = config.clip {
                clip_global_norm(&mut grads, max_norm);
            }
            optimizer.update(&mut params, &grads)?;
        }
        let val_accuracy = if split.validation.is_empty() {
            accuracy(&params, &split.train, config.threshold)?
        } else {
            accuracy(&params, &split.validation, config.threshold)?
        };
        log.push(EpochLog {
            epoch,
            train_loss: total / order.len() as f64,
            val_accuracy,
        });
        if val_accuracy > best_val {
            best_val = val_accuracy;
            best_epoch = epoch;
            best = params.clone();
        } else if epoch - best_epoch >= config.patience.max(1) {
            break;
        }
    }
    Ok(TrainOutcome {
        params: if best_epoch == 0 { params } else { best },
        log,
        best_epoch,
        best_val_accuracy: best_val.max(0.0),
    })
}
