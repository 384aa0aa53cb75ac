//! Confusion counts, the four classification metrics and the report
//! generators (training-size curve, user-activity breakdown).
//!
//! The positive class is `Satisfied` (+1). A metric whose denominator is
//! zero is reported as 0 and flagged in [`MetricsReport::degenerate`].

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::ingest::{Bag, DatasetSplit, Label, MIN_SPLIT_BAGS};
use crate::mil_ntn::predict;
use crate::training::{train, ModelParams, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predictions} predictions for {truths} labels")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("training fraction {0} is outside (0, 1]")]
    BadFraction(f64),
    #[error("training fraction {fraction} gives {bags} bags, need at least {MIN_SPLIT_BAGS}")]
    TooFewBags { fraction: f64, bags: usize },
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion(predictions: &[Label], truths: &[Label]) -> Result<ConfusionCounts, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (p, t) in predictions.iter().zip(truths) {
        match (p.is_positive(), t.is_positive()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Which metrics hit a 0/0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Degenerate {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
    pub accuracy: bool,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1 || self.accuracy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub degenerate: Degenerate,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

pub fn metrics(c: ConfusionCounts) -> MetricsReport {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let (precision, dp) = ratio(tp, tp + fp);
    let (recall, dr) = ratio(tp, tp + fn_);
    let (f1, df) = ratio(2.0 * precision * recall, precision + recall);
    let (accuracy, da) = ratio(tp + tn, tp + tn + fp + fn_);
    MetricsReport {
        counts: c,
        precision,
        recall,
        f1,
        accuracy,
        degenerate: Degenerate {
            precision: dp,
            recall: dr,
            f1: df,
            accuracy: da,
        },
    }
}

pub const METRIC_COLUMNS: &str = "tp\ttn\tfp\tfn\tprecision\trecall\tf1\taccuracy";

impl MetricsReport {
    /// Tab-separated values in [`METRIC_COLUMNS`] order, no newline.
    pub fn tsv_fields(&self) -> String {
        let c = self.counts;
        format!(
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            c.tp, c.tn, c.fp, c.fn_, self.precision, self.recall, self.f1, self.accuracy
        )
    }

    pub fn to_tsv(&self) -> String {
        format!("{METRIC_COLUMNS}\n{}\n", self.tsv_fields())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// Per-bag probabilities from a trained model.
pub fn probabilities(params: &ModelParams, bags: &[Bag]) -> Result<Vec<f64>, TrainError> {
    bags.iter().map(|b| Ok(params.score(b)?.prob)).collect()
}

pub fn evaluate(params: &ModelParams, bags: &[Bag], threshold: f64) -> Result<MetricsReport, EvalError> {
    let preds: Vec<Label> = probabilities(params, bags)?
        .into_iter()
        .map(|p| predict(p, threshold))
        .collect();
    let truths: Vec<Label> = bags.iter().map(|b| b.label).collect();
    Ok(metrics(confusion(&preds, &truths)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub fraction: f64,
    pub train_bags: usize,
    pub metrics: MetricsReport,
}

/// Trains from scratch on the leading `fraction` of the (already shuffled)
/// train split for each fraction and evaluates on the test split.
pub fn learning_curve(
    fractions: &[f64],
    split: &DatasetSplit,
    config: &TrainConfig,
    vocab_size: usize,
) -> Result<Vec<CurveRow>, EvalError> {
    let mut sizes = Vec::with_capacity(fractions.len());
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(EvalError::BadFraction(f));
        }
        let n = (f * split.train.len() as f64).round() as usize;
        if n < MIN_SPLIT_BAGS {
            return Err(EvalError::TooFewBags { fraction: f, bags: n });
        }
        sizes.push(n);
    }
    let mut rows = Vec::with_capacity(fractions.len());
    for (&fraction, &n) in fractions.iter().zip(&sizes) {
        let sub = DatasetSplit {
            train: split.train[..n].to_vec(),
            validation: split.validation.clone(),
            test: split.test.clone(),
            seed: split.seed,
        };
        let outcome = train(&sub, config, vocab_size)?;
        rows.push(CurveRow {
            fraction,
            train_bags: n,
            metrics: evaluate(&outcome.params, &split.test, config.threshold)?,
        });
    }
    Ok(rows)
}

pub fn curve_to_tsv(rows: &[CurveRow]) -> String {
    let mut out = String::from("fraction\ttrain_bags\tprecision\trecall\tf1\taccuracy\n");
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.fraction, r.train_bags, m.precision, m.recall, m.f1, m.accuracy
        );
    }
    out
}

/// Asker activity bucket: questions the asker has in the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ActivityBucket {
    Unseen,
    One,
    Two,
    Three,
    Four,
    FiveOrMore,
}

impl ActivityBucket {
    pub const ALL: [ActivityBucket; 6] = [
        ActivityBucket::Unseen,
        ActivityBucket::One,
        ActivityBucket::Two,
        ActivityBucket::Three,
        ActivityBucket::Four,
        ActivityBucket::FiveOrMore,
    ];

    pub fn from_count(n: usize) -> Self {
        match n {
            0 => Self::Unseen,
            1 => Self::One,
            2 => Self::Two,
            3 => Self::Three,
            4 => Self::Four,
            _ => Self::FiveOrMore,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Unseen => "0",
            Self::One => "1",
            Self::Two => "2",
            Self::Three => "3",
            Self::Four => "4",
            Self::FiveOrMore => ">=5",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketRow {
    pub bucket: ActivityBucket,
    pub bags: usize,
    pub metrics: MetricsReport,
}

/// Metrics per asker-activity bucket; empty buckets are omitted.
pub fn user_activity_breakdown(
    train: &[Bag],
    test: &[Bag],
    predictions: &[Label],
) -> Result<Vec<BucketRow>, EvalError> {
    if predictions.len() != test.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truths: test.len(),
        });
    }
    let mut activity: HashMap<u64, usize> = HashMap::new();
    for b in train {
        *activity.entry(b.user_id).or_default() += 1;
    }
    let mut rows = Vec::new();
    for bucket in ActivityBucket::ALL {
        let (preds, truths): (Vec<Label>, Vec<Label>) = test
            .iter()
            .zip(predictions)
            .filter(|(b, _)| ActivityBucket::from_count(activity.get(&b.user_id).copied().unwrap_or(0)) == bucket)
            .map(|(b, p)| (*p, b.label))
            .unzip();
        if preds.is_empty() {
            continue;
        }
        rows.push(BucketRow {
            bucket,
            bags: preds.len(),
            metrics: metrics(confusion(&preds, &truths)?),
        });
    }
    Ok(rows)
}

pub fn breakdown_to_tsv(rows: &[BucketRow]) -> String {
    let mut out = format!("bucket\tbags\t{METRIC_COLUMNS}\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}", r.bucket.label(), r.bags, r.metrics.tsv_fields());
    }
    out
}
