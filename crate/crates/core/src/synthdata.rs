//! Seeded synthetic bags following the trigger rule: a bag is positive iff
//! at least one of its answers contains the trigger token.
//!
//! Positive bags get exactly one trigger occurrence, placed in one randomly
//! chosen answer, so the signal is confined to a single instance. Every other
//! token is uniform over the non-reserved, non-trigger ids. Askers are drawn
//! from a small pool with a skewed distribution so activity buckets are
//! populated.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ingest::{Bag, Label, Vocab};

/// First id available to ordinary tokens.
pub const FIRST_TOKEN_ID: u32 = 2;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub bags: usize,
    pub vocab_size: usize,
    pub answers_per_bag: RangeInclusive<usize>,
    pub tokens_per_text: RangeInclusive<usize>,
    pub trigger: u32,
    pub positive_fraction: f64,
    pub user_pool: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            bags: 2000,
            vocab_size: 50,
            answers_per_bag: 1..=4,
            tokens_per_text: 4..=12,
            trigger: FIRST_TOKEN_ID,
            positive_fraction: 0.5,
            user_pool: 200,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.bags == 0 {
            return bad("bag count must be nonzero");
        }
        if self.vocab_size < FIRST_TOKEN_ID as usize + 2 {
            return bad("vocab size must leave at least one non-trigger token");
        }
        if self.trigger < FIRST_TOKEN_ID || self.trigger as usize >= self.vocab_size {
            return bad("trigger id must be in [2, vocab size)");
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return bad("positive fraction must be in [0, 1]");
        }
        if self.answers_per_bag.is_empty() || *self.answers_per_bag.start() == 0 {
            return bad("answers per bag must be a nonempty range starting at 1 or more");
        }
        if self.tokens_per_text.is_empty() || *self.tokens_per_text.start() == 0 {
            return bad("tokens per text must be a nonempty range starting at 1 or more");
        }
        if self.user_pool == 0 {
            return bad("user pool must be nonzero");
        }
        Ok(())
    }
}

fn filler<R: Rng>(rng: &mut R, config: &SynthConfig) -> u32 {
    // uniform over [2, V) minus the trigger
    let t = rng.gen_range(FIRST_TOKEN_ID..config.vocab_size as u32 - 1);
    if t >= config.trigger {
        t + 1
    } else {
        t
    }
}

fn text<R: Rng>(rng: &mut R, config: &SynthConfig) -> Vec<u32> {
    let len = rng.gen_range(config.tokens_per_text.clone());
    (0..len).map(|_| filler(rng, config)).collect()
}

pub fn generate(config: &SynthConfig) -> Result<Vec<Bag>, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut bags = Vec::with_capacity(config.bags);
    for id in 1..=config.bags as u64 {
        let positive = rng.gen_bool(config.positive_fraction);
        let u: f64 = rng.gen();
        let user_id = 1 + (config.user_pool as f64 * u * u) as u64;
        let question = text(&mut rng, config);
        let n = rng.gen_range(config.answers_per_bag.clone());
        let mut answers: Vec<Vec<u32>> = (0..n).map(|_| text(&mut rng, config)).collect();
        if positive {
            let j = rng.gen_range(0..n);
            let pos = rng.gen_range(0..answers[j].len());
            answers[j][pos] = config.trigger;
        }
        bags.push(Bag {
            question_id: id,
            user_id,
            question,
            answers,
            label: Label::from_bool(positive),
        });
    }
    Ok(bags)
}

/// The rule itself: positive iff some answer contains `trigger`.
pub fn oracle_label(bag: &Bag, trigger: u32) -> Label {
    Label::from_bool(bag.answers.iter().any(|a| a.contains(&trigger)))
}

/// Vocabulary matching the synthetic ids: `tok2 … tok{V-1}`.
pub fn synthetic_vocab(vocab_size: usize) -> Vocab {
    let tokens = (FIRST_TOKEN_ID..vocab_size as u32).map(|id| (format!("tok{id}"), 1));
    Vocab::from_tokens(tokens).expect("synthetic vocabulary is well formed")
}
