//! Question/answer bags, the line-delimited bag file, splits and forum stats.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::posts::{PostType, RawPost};
use super::text::{Tokenizer, Vocab, PAD_ID, UNK_ID};
use super::IngestError;

/// Bag-level satisfaction label, `+1` or `-1` on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Label {
    Satisfied,
    Unsatisfied,
}

impl Label {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Satisfied
        } else {
            Label::Unsatisfied
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Satisfied
    }

    pub fn flipped(self) -> Self {
        Self::from_bool(!self.is_positive())
    }

    /// `1.0` for satisfied and `0.0` otherwise, the logistic target.
    pub fn target(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            0.0
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        if l.is_positive() {
            1
        } else {
            -1
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, String> {
        match v {
            1 => Ok(Label::Satisfied),
            -1 => Ok(Label::Unsatisfied),
            other => Err(format!("label must be +1 or -1, got {other}")),
        }
    }
}

/// One question with all of its answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bag {
    #[serde(rename = "id")]
    pub question_id: u64,
    #[serde(rename = "user")]
    pub user_id: u64,
    #[serde(rename = "question")]
    pub question: Vec<u32>,
    #[serde(rename = "answers")]
    pub answers: Vec<Vec<u32>>,
    pub label: Label,
}

impl Bag {
    /// Checks the bag invariants against a vocabulary of `vocab_size` ids.
    pub fn validate(&self, vocab_size: usize) -> Result<(), IngestError> {
        let bad = |msg: String| IngestError::InvalidBag {
            question_id: self.question_id,
            message: msg,
        };
        if self.answers.is_empty() {
            return Err(bad("bag has no answers".into()));
        }
        if self.question.is_empty() || self.answers.iter().any(Vec::is_empty) {
            return Err(bad("empty token sequence".into()));
        }
        for &tok in self.question.iter().chain(self.answers.iter().flatten()) {
            if tok == PAD_ID {
                return Err(bad("PAD id inside a sequence".into()));
            }
            if tok as usize >= vocab_size {
                return Err(bad(format!("token id {tok} outside vocabulary of {vocab_size}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BagBuildReport {
    pub bags: Vec<Bag>,
    /// Questions without any answer.
    pub dropped_unanswered: usize,
    /// Questions whose asker has no user id.
    pub dropped_no_owner: usize,
    /// Answers whose parent is not a known question.
    pub orphan_answers: usize,
}

/// Empty texts become a single UNK so every sequence is encodable.
fn encode_text(tokenizer: &Tokenizer, vocab: &Vocab, body: &str) -> Vec<u32> {
    let ids = vocab.encode(&tokenizer.tokenize(body));
    if ids.is_empty() {
        vec![UNK_ID]
    } else {
        ids
    }
}

/// Groups answers under their questions; label is `+1` iff the question
/// has an accepted answer.
pub fn build_bags(posts: &[RawPost], vocab: &Vocab, tokenizer: &Tokenizer) -> BagBuildReport {
    let question_ids: HashSet<u64> = posts
        .iter()
        .filter(|p| p.post_type == PostType::Question)
        .map(|p| p.id)
        .collect();
    let mut answers: HashMap<u64, Vec<&RawPost>> = HashMap::new();
    let mut report = BagBuildReport::default();
    for post in posts.iter().filter(|p| p.post_type == PostType::Answer) {
        match post.parent_id {
            Some(parent) if question_ids.contains(&parent) => {
                answers.entry(parent).or_default().push(post)
            }
            _ => report.orphan_answers += 1,
        }
    }
    for q in posts.iter().filter(|p| p.post_type == PostType::Question) {
        let Some(list) = answers.get(&q.id) else {
            report.dropped_unanswered += 1;
            continue;
        };
        let Some(user_id) = q.owner_user_id else {
            report.dropped_no_owner += 1;
            continue;
        };
        report.bags.push(Bag {
            question_id: q.id,
            user_id,
            question: encode_text(tokenizer, vocab, &q.body),
            answers: list
                .iter()
                .map(|a| encode_text(tokenizer, vocab, &a.body))
                .collect(),
            label: Label::from_bool(q.accepted_answer_id.is_some()),
        });
    }
    report
}

pub fn write_bags<W: Write>(bags: &[Bag], mut out: W) -> Result<(), IngestError> {
    for bag in bags {
        serde_json::to_writer(&mut out, bag).map_err(|e| IngestError::BagFile {
            line: 0,
            message: e.to_string(),
        })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_bags<R: BufRead>(input: R) -> Result<Vec<Bag>, IngestError> {
    let mut bags = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bag: Bag = serde_json::from_str(&line).map_err(|e| IngestError::BagFile {
            line: n + 1,
            message: e.to_string(),
        })?;
        if bag.answers.is_empty() {
            return Err(IngestError::BagFile {
                line: n + 1,
                message: "bag has no answers".into(),
            });
        }
        bags.push(bag);
    }
    Ok(bags)
}

pub const VALIDATION_FRACTION: f64 = 0.10;
pub const TEST_FRACTION: f64 = 0.30;
pub const MIN_SPLIT_BAGS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<Bag>,
    pub validation: Vec<Bag>,
    pub test: Vec<Bag>,
    pub seed: u64,
}

/// Seeded 60/10/30 partition by question.
///
/// Bags are first ordered by question id so the result does not depend on
/// input order, then shuffled with the seeded generator.
pub fn split(bags: &[Bag], seed: u64) -> Result<DatasetSplit, IngestError> {
    if bags.len() < MIN_SPLIT_BAGS {
        return Err(IngestError::TooFewBags {
            needed: MIN_SPLIT_BAGS,
            found: bags.len(),
        });
    }
    let mut ordered: Vec<&Bag> = bags.iter().collect();
    ordered.sort_by_key(|b| b.question_id);
    if let Some(w) = ordered.windows(2).find(|w| w[0].question_id == w[1].question_id) {
        return Err(IngestError::DuplicateQuestion(w[0].question_id));
    }
    ordered.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n = bags.len() as f64;
    let n_val = (VALIDATION_FRACTION * n).round() as usize;
    let n_test = (TEST_FRACTION * n).round() as usize;
    let n_train = bags.len() - n_val - n_test;
    let owned = |s: &[&Bag]| s.iter().map(|b| (*b).clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: owned(&ordered[..n_train]),
        validation: owned(&ordered[n_train..n_train + n_val]),
        test: owned(&ordered[n_train + n_val..]),
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForumStats {
    pub question_count: usize,
    pub answer_count: usize,
    pub user_count: usize,
    pub satisfied_fraction: f64,
}

pub fn stats(bags: &[Bag]) -> ForumStats {
    let users: BTreeSet<u64> = bags.iter().map(|b| b.user_id).collect();
    let satisfied = bags.iter().filter(|b| b.label.is_positive()).count();
    ForumStats {
        question_count: bags.len(),
        answer_count: bags.iter().map(|b| b.answers.len()).sum(),
        user_count: users.len(),
        satisfied_fraction: if bags.is_empty() {
            0.0
        } else {
            satisfied as f64 / bags.len() as f64
        },
    }
}

/// Published per-forum counts for the 2016-era snapshots, used only to
/// report drift against a user-supplied dump.
pub const REFERENCE_FORUMS: [(&str, ForumStats); 4] = [
    ("android", ForumStats { question_count: 25310, answer_count: 42238, user_count: 15845, satisfied_fraction: 0.421 }),
    ("academia", ForumStats { question_count: 12062, answer_count: 31046, user_count: 5875, satisfied_fraction: 0.506 }),
    ("photo", ForumStats { question_count: 14414, answer_count: 38206, user_count: 6867, satisfied_fraction: 0.596 }),
    ("christian", ForumStats { question_count: 6915, answer_count: 17502, user_count: 1777, satisfied_fraction: 0.539 }),
];

pub fn reference_stats(forum: &str) -> Option<ForumStats> {
    let key = forum.to_ascii_lowercase();
    REFERENCE_FORUMS
        .iter()
        .find(|(name, _)| *name == key)
        .map(|(_, s)| *s)
}
