//! Bag-of-words logistic baselines on the same bag format.
//!
//! `Mean` collapses the bag first: `x = [bow(q); mean_j bow(a_j)]` and
//! `logit = wᵀx + b`. `Max` scores every answer on its own,
//! `logit = max_j (wᵀ[bow(q); bow(a_j)] + b)`, which is the linear analogue
//! of instance-level max pooling. `bow` is the count vector divided by the
//! text length.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::evaluation::{confusion, metrics, EvalError, MetricsReport};
use crate::ingest::{Bag, DatasetSplit, Label};
use crate::mil_ntn::predict;
use crate::numerics::{sigmoid, ParamSet, Tensor};
use crate::training::{add_l2_grad, bag_loss, clip_global_norm, AdaGrad, TrainConfig, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Mean,
    Max,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mean => "bow_mean",
            Self::Max => "bow_max",
        }
    }
}

/// Weights over `[question vocab; answer vocab]` plus a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LinearModel {
    pub fn zeros(vocab_size: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[2 * vocab_size]),
            bias: Tensor::zeros(&[1]),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.len() / 2
    }

    fn affine(&self, features: &[(usize, f64)]) -> f64 {
        let w = self.weights.data();
        self.bias.data()[0] + features.iter().map(|&(k, x)| w[k] * x).sum::<f64>()
    }
}

impl ParamSet for LinearModel {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("weights".into(), &self.weights), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("weights".into(), &mut self.weights), ("bias".into(), &mut self.bias)]
    }
}

/// Sparse normalized counts, offset into the feature space; sorted by index.
fn bow(tokens: &[u32], offset: usize) -> Vec<(usize, f64)> {
    let mut ids: Vec<usize> = tokens.iter().map(|&t| t as usize + offset).collect();
    ids.sort_unstable();
    let scale = 1.0 / tokens.len().max(1) as f64;
    let mut out: Vec<(usize, f64)> = Vec::new();
    for id in ids {
        match out.last_mut() {
            Some((k, x)) if *k == id => *x += scale,
            _ => out.push((id, scale)),
        }
    }
    out
}

/// One feature vector for `Mean`, one per answer for `Max`.
pub fn features(bag: &Bag, kind: BaselineKind, vocab_size: usize) -> Vec<Vec<(usize, f64)>> {
    let q = bow(&bag.question, 0);
    let per_answer = bag.answers.iter().map(|a| bow(a, vocab_size));
    match kind {
        BaselineKind::Max => per_answer.map(|a| [q.as_slice(), &a].concat()).collect(),
        BaselineKind::Mean => {
            let n = bag.answers.len().max(1) as f64;
            let mut dense = vec![0.0; vocab_size];
            for a in per_answer {
                for (k, x) in a {
                    dense[k - vocab_size] += x / n;
                }
            }
            let mean = dense
                .into_iter()
                .enumerate()
                .filter(|(_, x)| *x != 0.0)
                .map(|(k, x)| (k + vocab_size, x));
            vec![q.into_iter().chain(mean).collect()]
        }
    }
}

fn score_features(model: &LinearModel, feats: &[Vec<(usize, f64)>]) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (j, f) in feats.iter().enumerate() {
        let s = model.affine(f);
        if s > best.0 {
            best = (s, j);
        }
    }
    best
}

pub fn probability(model: &LinearModel, bag: &Bag, kind: BaselineKind) -> f64 {
    sigmoid(score_features(model, &features(bag, kind, model.vocab_size())).0)
}

/// Bag loss and its gradient; under `Max` only the winning answer's features
/// receive gradient.
pub fn loss_and_grad(model: &LinearModel, bag: &Bag, kind: BaselineKind) -> (f64, LinearModel) {
    let feats = features(bag, kind, model.vocab_size());
    let (logit, j) = score_features(model, &feats);
    let prob = sigmoid(logit);
    let dlogit = prob - bag.label.target();
    let mut grad = LinearModel::zeros(model.vocab_size());
    for &(k, x) in &feats[j] {
        grad.weights.data_mut()[k] += dlogit * x;
    }
    grad.bias.data_mut()[0] = dlogit;
    (bag_loss(prob, bag.label), grad)
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub kind: BaselineKind,
    pub model: LinearModel,
    pub metrics: MetricsReport,
    pub epoch_losses: Vec<f64>,
}

/// Zero-initialized logistic regression trained for `config.epochs` epochs
/// with AdaGrad, evaluated on the test split.
pub fn train_baseline(
    split: &DatasetSplit,
    config: &TrainConfig,
    vocab_size: usize,
    kind: BaselineKind,
) -> Result<BaselineOutcome, EvalError> {
    if split.train.is_empty() {
        return Err(TrainError::EmptyTrainSet.into());
    }
    config.validate()?;
    for bag in split.train.iter().chain(&split.validation).chain(&split.test) {
        bag.validate(vocab_size).map_err(TrainError::from)?;
    }
    let mut model = LinearModel::zeros(vocab_size);
    let mut optimizer = AdaGrad::new(&model, config.rho);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5u64 << 32));
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &idx in &order {
            let bag = &split.train[idx];
            let (loss, mut grad) = loss_and_grad(&model, bag, kind);
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss(bag.question_id).into());
            }
            total += loss;
            add_l2_grad(&mut grad, &model, config.lambda);
            if let Some(max_norm) = config.clip {
                clip_global_norm(&mut grad, max_norm);
            }
            optimizer.update(&mut model, &grad)?;
        }
        epoch_losses.push(total / order.len() as f64);
    }
    let metrics = evaluate_baseline(&model, &split.test, kind, config.threshold)?;
    Ok(BaselineOutcome {
        kind,
        model,
        metrics,
        epoch_losses,
    })
}

pub fn evaluate_baseline(
    model: &LinearModel,
    bags: &[Bag],
    kind: BaselineKind,
    threshold: f64,
) -> Result<MetricsReport, EvalError> {
    let preds: Vec<Label> = bags
        .iter()
        .map(|b| predict(probability(model, b, kind), threshold))
        .collect();
    let truths: Vec<Label> = bags.iter().map(|b| b.label).collect();
    Ok(metrics(confusion(&preds, &truths)?))
}

pub fn bow_mean_baseline(
    split: &DatasetSplit,
    config: &TrainConfig,
    vocab_size: usize,
) -> Result<BaselineOutcome, EvalError> {
    train_baseline(split, config, vocab_size, BaselineKind::Mean)
}

pub fn bow_max_baseline(
    split: &DatasetSplit,
    config: &TrainConfig,
    vocab_size: usize,
) -> Result<BaselineOutcome, EvalError> {
    train_baseline(split, config, vocab_size, BaselineKind::Max)
}
