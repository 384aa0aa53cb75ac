//! Per-scalar adaptive step sizes from accumulated squared gradients.

use crate::numerics::ParamSet;

use super::TrainError;

pub const ADAGRAD_EPSILON: f64 = 1e-8;

/// `θ ← θ − ρ / √(Σ g² + ε) · g`, one accumulator per scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGrad {
    pub rho: f64,
    pub epsilon: f64,
    accum: Vec<Vec<f64>>,
    step: u64,
}

impl AdaGrad {
    pub fn new<P: ParamSet>(params: &P, rho: f64) -> Self {
        Self {
            rho,
            epsilon: ADAGRAD_EPSILON,
            accum: params
                .tensors()
                .iter()
                .map(|(_, t)| vec![0.0; t.len()])
                .collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.accum
    }

    /// Applies one update. A non-finite gradient aborts before any
    /// parameter or accumulator is touched.
    pub fn update<P: ParamSet>(&mut self, params: &mut P, grads: &P) -> Result<(), TrainError> {
        let grads = grads.tensors();
        for (name, g) in &grads {
            if let Some(k) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(TrainError::NonFiniteGradient(format!("{name}[{k}]")));
            }
        }
        let mut params = params.tensors_mut();
        if params.len() != grads.len() || params.len() != self.accum.len() {
            return Err(TrainError::Dimensions("gradient layout does not match parameters".into()));
        }
        for ((acc, (_, p)), (name, g)) in self.accum.iter_mut().zip(params.iter_mut()).zip(&grads) {
            if p.len() != g.len() || acc.len() != g.len() {
                return Err(TrainError::Dimensions(format!("{name}: gradient shape mismatch")));
            }
            for ((a, theta), &gv) in acc.iter_mut().zip(p.data_mut()).zip(g.data()) {
                if gv == 0.0 {
                    continue;
                }
                *a += gv * gv;
                *theta -= self.rho / (*a + self.epsilon).sqrt() * gv;
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before scaling.
pub fn clip_global_norm<P: ParamSet>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads.sum_squares().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, t) in grads.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}
