//! Whole-model finite-difference check on a tiny random model and bag.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embeddings::{EmbeddingTable, UserTable};
use crate::ingest::{Bag, Label};
use crate::numerics::{finite_diff_check, GradCheckReport, Tensor, DEFAULT_GRADCHECK_EPSILON};

use super::{bag_objective_and_grad, Dims, ModelParams, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckSetup {
    pub dims: Dims,
    pub vocab_size: usize,
    pub answers: usize,
    pub seed: u64,
    /// Larger than the training init so no gradient is vanishingly small.
    pub init_scale: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        Self {
            dims: Dims {
                word: 5,
                hidden: 4,
                user: 3,
                slices: 3,
            },
            vocab_size: 12,
            answers: 3,
            seed: 1,
            init_scale: 1.0,
            lambda: 0.0,
            epsilon: DEFAULT_GRADCHECK_EPSILON,
        }
    }
}

/// Random parameters and a random bag for `setup`.
pub fn random_problem(setup: &GradCheckSetup) -> Result<(ModelParams, Bag), TrainError> {
    if setup.vocab_size < 3 || setup.answers == 0 {
        return Err(TrainError::Config("gradcheck needs vocab size >= 3 and at least one answer".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let d = setup.dims;
    let mut words = Tensor::uniform(&[setup.vocab_size, d.word], setup.init_scale, &mut rng);
    words.row_mut(0).fill(0.0);
    let users = UserTable::from_parts(Tensor::uniform(&[3, d.user], setup.init_scale, &mut rng), &[3, 11])?;
    let params = ModelParams::init(EmbeddingTable::new(words), users, d, setup.init_scale, &mut rng)?;
    let mut text = |len: usize| -> Vec<u32> { (0..len).map(|_| rng.gen_range(2..setup.vocab_size as u32)).collect() };
    let question = text(5);
    let answers = (0..setup.answers).map(|j| text(3 + (2 * j) % 5)).collect();
    let bag = Bag {
        question_id: 1,
        user_id: 11,
        question,
        answers,
        label: if setup.seed.is_multiple_of(2) { Label::Unsatisfied } else { Label::Satisfied },
    };
    Ok((params, bag))
}

/// Analytic gradient of the bag objective against central differences,
/// one report row per parameter tensor.
pub fn model_gradcheck(setup: &GradCheckSetup) -> Result<GradCheckReport, TrainError> {
    let (params, bag) = random_problem(setup)?;
    let (_, _, grads) = bag_objective_and_grad(&params, &bag, setup.lambda)?;
    let loss = |p: &ModelParams| {
        bag_objective_and_grad(p, &bag, setup.lambda)
            .map(|r| r.0)
            .unwrap_or(f64::NAN)
    };
    Ok(finite_diff_check(loss, &params, &grads, setup.epsilon)?)
}
