//! The full model: embeddings, both encoders, users and the bag scorer.

use rand::Rng;

use crate::embeddings::{EmbeddingTable, UserTable};
use crate::encoders::{qu_concat, qu_split, BiLstmEncoder};
use crate::ingest::Bag;
use crate::mil_ntn::{score_bag, score_bag_backward, BagScore, NtnParams};
use crate::numerics::{ParamSet, Tensor};

use super::{bag_loss, TrainError};

/// Sizes of every model component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub word: usize,
    pub hidden: usize,
    pub user: usize,
    pub slices: usize,
}

impl Dims {
    pub fn query(&self) -> usize {
        2 * self.hidden + self.user
    }

    pub fn answer(&self) -> usize {
        2 * self.hidden
    }
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            word: 64,
            hidden: 32,
            user: 32,
            slices: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embeddings: EmbeddingTable,
    pub question_encoder: BiLstmEncoder,
    pub answer_encoder: BiLstmEncoder,
    pub users: UserTable,
    pub ntn: NtnParams,
}

impl ModelParams {
    /// Random init `U[-scale, scale]` for the encoders and the scorer.
    pub fn init<R: Rng + ?Sized>(
        embeddings: EmbeddingTable,
        users: UserTable,
        dims: Dims,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self, TrainError> {
        let question_encoder = BiLstmEncoder::uniform(dims.word, dims.hidden, scale, rng);
        let answer_encoder = BiLstmEncoder::uniform(dims.word, dims.hidden, scale, rng);
        let ntn = NtnParams::uniform(dims.query(), dims.answer(), dims.slices, scale, rng);
        let params = Self {
            embeddings,
            question_encoder,
            answer_encoder,
            users,
            ntn,
        };
        params.check_dims()?;
        Ok(params)
    }

    pub fn dims(&self) -> Dims {
        Dims {
            word: self.embeddings.dim(),
            hidden: self.question_encoder.hidden(),
            user: self.users.dim(),
            slices: self.ntn.slices(),
        }
    }

    /// Cross-component shape agreement.
    pub fn check_dims(&self) -> Result<(), TrainError> {
        let d = self.dims();
        let problems = [
            (self.question_encoder.forward.input() != d.word, "question encoder input"),
            (self.answer_encoder.forward.input() != d.word, "answer encoder input"),
            (self.answer_encoder.hidden() != d.hidden, "answer encoder hidden size"),
            (self.question_encoder.backward.hidden() != d.hidden, "question backward hidden size"),
            (self.answer_encoder.backward.hidden() != d.hidden, "answer backward hidden size"),
            (self.ntn.query_dim() != d.query(), "scorer query dimension"),
            (self.ntn.answer_dim() != d.answer(), "scorer answer dimension"),
            (self.ntn.mu.len() != d.slices, "scorer output weights"),
        ];
        match problems.iter().find(|(bad, _)| *bad) {
            Some((_, what)) => Err(TrainError::Dimensions(format!("{what} inconsistent with {d:?}"))),
            None => Ok(()),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embeddings: EmbeddingTable::new(self.embeddings.matrix.zeros_like()),
            question_encoder: self.question_encoder.zeros_like(),
            answer_encoder: self.answer_encoder.zeros_like(),
            users: self.users.zeros_like(),
            ntn: self.ntn.zeros_like(),
        }
    }

    /// Scores one bag without keeping backward state.
    pub fn score(&self, bag: &Bag) -> Result<BagScore, TrainError> {
        let q = self.question_encoder.encode_question(&bag.question, &self.embeddings)?;
        let qu = qu_concat(&q, self.users.lookup(bag.user_id));
        let answers = bag
            .answers
            .iter()
            .map(|a| self.answer_encoder.encode_answer(a, &self.embeddings))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(score_bag(&qu, &answers, &self.ntn)?)
    }

    /// Bag loss and its gradient, accumulated into `grads`.
    pub fn loss_and_grad(&self, bag: &Bag, grads: &mut ModelParams) -> Result<(f64, f64), TrainError> {
        let (q, q_trace) = self.question_encoder.trace_question(&bag.question, &self.embeddings)?;
        let user_row = self.users.row_of(bag.user_id);
        let qu = qu_concat(&q, self.users.matrix.row(user_row));
        let mut answer_vecs = Vec::with_capacity(bag.answers.len());
        let mut answer_traces = Vec::with_capacity(bag.answers.len());
        for a in &bag.answers {
            let (v, t) = self.answer_encoder.trace_answer(a, &self.embeddings)?;
            answer_vecs.push(v);
            answer_traces.push(t);
        }
        let score = score_bag(&qu, &answer_vecs, &self.ntn)?;
        let loss = bag_loss(score.prob, bag.label);

        // d(-log-likelihood)/d(logit) for a sigmoid output
        let dlogit = score.prob - bag.label.target();
        let input_grads = score_bag_backward(&qu, &answer_vecs, &self.ntn, &score, dlogit, &mut grads.ntn);
        let (dq, du) = qu_split(&input_grads.qu, q.len());
        for (g, d) in grads.users.matrix.row_mut(user_row).iter_mut().zip(du) {
            *g += d;
        }
        for (trace, da) in answer_traces.iter().zip(&input_grads.answers) {
            if da.iter().all(|v| *v == 0.0) {
                continue;
            }
            self.answer_encoder
                .backward_answer(trace, da, &mut grads.answer_encoder, &mut grads.embeddings.matrix);
        }
        self.question_encoder
            .backward_question(&q_trace, dq, &mut grads.question_encoder, &mut grads.embeddings.matrix);
        Ok((loss, score.prob))
    }
}

fn push_encoder<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, enc: &'a BiLstmEncoder) {
    for (dir, p) in [("forward", &enc.forward), ("backward", &enc.backward)] {
        for (name, t) in p.named() {
            out.push((format!("{prefix}.{dir}.{name}"), t));
        }
    }
}

fn push_encoder_mut<'a>(out: &mut Vec<(String, &'a mut Tensor)>, prefix: &str, enc: &'a mut BiLstmEncoder) {
    for (dir, p) in [("forward", &mut enc.forward), ("backward", &mut enc.backward)] {
        for (name, t) in p.named_mut() {
            out.push((format!("{prefix}.{dir}.{name}"), t));
        }
    }
}

impl ParamSet for ModelParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embeddings.word".to_string(), &self.embeddings.matrix)];
        push_encoder(&mut out, "question", &self.question_encoder);
        push_encoder(&mut out, "answer", &self.answer_encoder);
        out.push(("users.table".to_string(), &self.users.matrix));
        out.push(("ntn.w".to_string(), &self.ntn.w));
        out.push(("ntn.mu".to_string(), &self.ntn.mu));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("embeddings.word".to_string(), &mut self.embeddings.matrix)];
        push_encoder_mut(&mut out, "question", &mut self.question_encoder);
        push_encoder_mut(&mut out, "answer", &mut self.answer_encoder);
        out.push(("users.table".to_string(), &mut self.users.matrix));
        out.push(("ntn.w".to_string(), &mut self.ntn.w));
        out.push(("ntn.mu".to_string(), &mut self.ntn.mu));
        out
    }
}
