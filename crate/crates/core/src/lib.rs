//! Multiple-instance answer-quality prediction for community Q&A forums.
//!
//! A question and all of its answers form a bag labeled only at the bag
//! level (did the asker accept an answer). Questions and answers are encoded
//! with BiLSTMs, the question encoding is joined with an asker embedding, and
//! a tensor scorer rates every answer against it. Pooling the per-answer
//! scores with a max gives the bag probability.
//!
//! Modules, bottom-up: [`numerics`], [`ingest`], [`embeddings`],
//! [`encoders`], [`mil_ntn`], [`training`], [`evaluation`], [`baselines`],
//! [`synthdata`] and the command-line front end in [`cli`].

// Range checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod embeddings;
pub mod encoders;
pub mod evaluation;
pub mod ingest;
pub mod mil_ntn;
pub mod numerics;
pub mod synthdata;
pub mod training;
