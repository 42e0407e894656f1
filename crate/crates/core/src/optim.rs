//! First-order optimizers over a [`ParamStore`].

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::TensorError;
use crate::params::{GradBuffer, ParamId, ParamStore};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Adam first/second moment buffers, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    pub t: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<S> {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    adam: Option<AdamState<S>>,
}

impl<S: Real> Optimizer<S> {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            adam: None,
        }
    }

    pub fn adam(lr: f64, params: &ParamStore<S>) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| vec![S::zero(); t.len()]).collect();
        Self {
            kind: OptimizerKind::Adam,
            adam: Some(AdamState {
                m: zeros(),
                v: zeros(),
                t: 0,
            }),
            ..Self::sgd(lr)
        }
    }

    pub fn new(kind: OptimizerKind, lr: f64, params: &ParamStore<S>) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(lr),
            OptimizerKind::Adam => Self::adam(lr, params),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn adam_state(&self) -> Option<&AdamState<S>> {
        self.adam.as_ref()
    }

    /// Replaces the moment buffers, e.g. when resuming from a checkpoint.
    pub fn set_adam_state(&mut self, state: AdamState<S>) {
        self.adam = Some(state);
    }

    /// Applies one update from `grads`, then zeroes them.
    pub fn step(&mut self, params: &mut ParamStore<S>, grads: &mut GradBuffer<S>) -> Result<(), TensorError> {
        if !grads.is_populated() {
            return Err(TensorError::Usage("optimizer step without gradients"));
        }
        if grads.len() != params.len() {
            return Err(TensorError::Usage("gradient buffer does not match parameters"));
        }
        let lr = S::of(self.lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for i in 0..params.len() {
                    let id = ParamId(i);
                    let g = grads.get(id);
                    for (p, &d) in params.get_mut(id).data_mut().iter_mut().zip(g) {
                        *p -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let state = self.adam.as_mut().expect("adam state");
                state.t += 1;
                let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
                let c1 = S::of(1.0 - libm::pow(self.beta1, state.t as f64));
                let c2 = S::of(1.0 - libm::pow(self.beta2, state.t as f64));
                let eps = S::of(self.eps);
                for i in 0..params.len() {
                    let id = ParamId(i);
                    let g = grads.get(id);
                    let (m, v) = (&mut state.m[i], &mut state.v[i]);
                    for (k, p) in params.get_mut(id).data_mut().iter_mut().enumerate() {
                        let d = g[k];
                        m[k] = b1 * m[k] + (S::one() - b1) * d;
                        v[k] = b2 * v[k] + (S::one() - b2) * d * d;
                        let mhat = m[k] / c1;
                        let vhat = v[k] / c2;
                        *p -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        grads.zero();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param(value: f64) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(value));
        p
    }

    #[test]
    fn sgd_single_step() {
        let mut p = one_param(1.0);
        let mut g = GradBuffer::for_params(&p);
        g.accumulate(ParamId(0), &[1.0]);
        Optimizer::sgd(0.1).step(&mut p, &mut g).unwrap();
        assert!((p.get(ParamId(0)).item() - 0.9).abs() < 1e-15);
        assert_eq!(g.get(ParamId(0)), &[0.0]);
        assert!(!g.is_populated());
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut p = one_param(2.5);
            let mut opt = Optimizer::new(kind, 0.1, &p);
            let mut g = GradBuffer::for_params(&p);
            g.mark_populated();
            opt.step(&mut p, &mut g).unwrap();
            assert_eq!(p.get(ParamId(0)).item(), 2.5);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // With g = 1: m̂ = 1, v̂ = 1, so the step is lr / (1 + eps).
        let mut p = one_param(0.0);
        let mut opt = Optimizer::adam(1e-3, &p);
        let mut g = GradBuffer::for_params(&p);
        g.accumulate(ParamId(0), &[1.0]);
        opt.step(&mut p, &mut g).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.get(ParamId(0)).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn missing_gradients_rejected() {
        let mut p = one_param(0.0);
        let mut g = GradBuffer::for_params(&p);
        assert!(matches!(
            Optimizer::sgd(0.1).step(&mut p, &mut g),
            Err(TensorError::Usage(_))
        ));
    }
}
