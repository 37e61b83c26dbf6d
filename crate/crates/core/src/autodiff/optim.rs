use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::scalar::Real;
use super::tensor::Tensor;
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            momentum: 0.99,
            weight_decay: 5e-4,
        }
    }
}

/// Momentum buffers, one per parameter entry (empty for frozen entries).
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<S> {
    pub config: SgdConfig,
    pub buffers: Vec<Tensor<S>>,
    /// Number of completed steps.
    pub iteration: u64,
}

impl<S: Real> SgdState<S> {
    pub fn new(params: &ModelParams<S>, config: SgdConfig) -> Self {
        SgdState {
            config,
            buffers: params
                .entries()
                .iter()
                .map(|e| Tensor::zeros(if e.learnable { e.value.shape() } else { [0, 0, 0, 0] }))
                .collect(),
            iteration: 0,
        }
    }

    pub fn check_compatible(&self, params: &ModelParams<S>) -> Result<()> {
        if self.buffers.len() != params.len() {
            return Err(shape_err!(
                "optimizer has {} buffers for {} parameters",
                self.buffers.len(),
                params.len()
            ));
        }
        for (b, e) in self.buffers.iter().zip(params.entries()) {
            if e.learnable && b.shape() != e.value.shape() {
                return Err(shape_err!("momentum buffer shape mismatch for {:?}", e.name));
            }
        }
        Ok(())
    }
}

/// `v ← μv + (g + λw)`, `w ← w − lr·v` for every learnable entry.
/// Gradients are left untouched.
pub fn sgd_step<S: Real>(params: &mut ModelParams<S>, state: &mut SgdState<S>, lr: f64) -> Result<()> {
    state.check_compatible(params)?;
    let mu = S::of(state.config.momentum);
    let wd = S::of(state.config.weight_decay);
    let lr = S::of(lr);
    for (e, v) in params.iter_mut().zip(&mut state.buffers) {
        if !e.learnable {
            continue;
        }
        let grad = e.grad.data();
        let w = e.value.data_mut();
        for ((wi, vi), &gi) in w.iter_mut().zip(v.data_mut()).zip(grad) {
            *vi = mu * *vi + (gi + wd * *wi);
            if lr != S::zero() {
                *wi -= lr * *vi;
            }
        }
    }
    state.iteration += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64, g: f64) -> ModelParams<f64> {
        let mut p = ModelParams::new();
        let id = p.insert("w", Tensor::scalar(w), true).unwrap();
        p.entry_mut(id).grad = Tensor::scalar(g);
        p
    }

    #[test]
    fn vanilla_sgd() {
        let mut p = single(0.5, 2.0);
        let mut s = SgdState::new(
            &p,
            SgdConfig {
                momentum: 0.0,
                weight_decay: 0.0,
            },
        );
        sgd_step(&mut p, &mut s, 0.1).unwrap();
        assert!((p.entries()[0].value.item() - 0.3).abs() < 1e-15);
        assert_eq!(p.entries()[0].grad.item(), 2.0);
    }

    #[test]
    fn decay_only_update() {
        let mut p = single(1.0, 0.0);
        let mut s = SgdState::new(
            &p,
            SgdConfig {
                momentum: 0.0,
                weight_decay: 5e-4,
            },
        );
        sgd_step(&mut p, &mut s, 1.0).unwrap();
        assert_eq!(p.entries()[0].value.item(), 1.0 - 5e-4);
    }

    #[test]
    fn two_momentum_steps() {
        let mut p = single(0.0, 1.0);
        let mut s = SgdState::new(
            &p,
            SgdConfig {
                momentum: 0.99,
                weight_decay: 0.0,
            },
        );
        sgd_step(&mut p, &mut s, 1.0).unwrap();
        sgd_step(&mut p, &mut s, 1.0).unwrap();
        assert!((p.entries()[0].value.item() + 2.99).abs() < 1e-12);
        assert_eq!(s.iteration, 2);
    }

    #[test]
    fn zero_lr_is_bitwise_noop() {
        let mut p = single(0.123456789, -3.0);
        let before = p.entries()[0].value.item().to_bits();
        let mut s = SgdState::new(&p, SgdConfig::default());
        sgd_step(&mut p, &mut s, 0.0).unwrap();
        assert_eq!(p.entries()[0].value.item().to_bits(), before);
    }

    #[test]
    fn frozen_entries_untouched() {
        let mut p = single(1.0, 1.0);
        p.insert("stat", Tensor::scalar(4.0), false).unwrap();
        let mut s = SgdState::new(&p, SgdConfig::default());
        sgd_step(&mut p, &mut s, 1.0).unwrap();
        assert_eq!(p.entries()[1].value.item(), 4.0);
    }
}
