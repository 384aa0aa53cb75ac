//! Stack Exchange dump ingestion: posts, tokens, vocabulary and bags.

mod bags;
mod posts;
mod text;

use std::io::BufRead;

use thiserror::Error;

pub use bags::{
    build_bags, read_bags, reference_stats, split, stats, write_bags, Bag, BagBuildReport,
    DatasetSplit, ForumStats, Label, MIN_SPLIT_BAGS, REFERENCE_FORUMS, TEST_FRACTION,
    VALIDATION_FRACTION,
};
pub use posts::{parse_posts, ParseTally, ParsedPosts, PostReader, PostType, RawPost};
pub use text::{
    Tokenizer, Vocab, DEFAULT_MAX_LEN, DEFAULT_MIN_COUNT, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed XML at byte {offset}: {message}")]
    Xml { offset: u64, message: String },
    #[error("bag file line {line}: {message}")]
    BagFile { line: usize, message: String },
    #[error("question {question_id}: {message}")]
    InvalidBag { question_id: u64, message: String },
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("need at least {needed} bags to split, found {found}")]
    TooFewBags { needed: usize, found: usize },
    #[error("question id {0} appears in more than one bag")]
    DuplicateQuestion(u64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything produced by one pass over a dump.
#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub vocab: Vocab,
    pub report: BagBuildReport,
    pub tally: ParseTally,
    pub post_count: usize,
}

/// Parses a dump, builds the vocabulary over all post bodies and groups the
/// posts into bags.
pub fn ingest_dump<R: BufRead>(
    source: R,
    tokenizer: &Tokenizer,
    min_count: u64,
) -> Result<IngestOutput, IngestError> {
    let parsed = parse_posts(source)?;
    let vocab = Vocab::build(
        parsed.posts.iter().map(|p| tokenizer.tokenize(&p.body)),
        min_count,
    );
    let report = build_bags(&parsed.posts, &vocab, tokenizer);
    Ok(IngestOutput {
        vocab,
        report,
        tally: parsed.tally,
        post_count: parsed.posts.len(),
    })
}
