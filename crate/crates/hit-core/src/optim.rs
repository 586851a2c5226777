//! AdamW with decoupled weight decay, plus the cosine learning-rate
//! schedule.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{GradSet, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// AdamW hyperparameters. Only the learning rate is externally prescribed;
/// the rest are the common defaults.
#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Per-parameter first/second moments plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamWState<T> {
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        Self {
            step: 0,
            m: (0..params.len())
                .map(|i| params.get(crate::params::ParamId(i)).zeros_like())
                .collect(),
            v: (0..params.len())
                .map(|i| params.get(crate::params::ParamId(i)).zeros_like())
                .collect(),
        }
    }
}

/// One AdamW update over every parameter. Decay is decoupled: the shrink
/// `lr * weight_decay * value` is applied to the pre-update value,
/// independently of the adaptive step. The step counter increments by
/// exactly one.
pub fn adamw_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &GradSet<T>,
    state: &mut AdamWState<T>,
    cfg: &AdamWConfig,
) -> Result<()> {
    for (i, grad) in grads.grads().iter().enumerate() {
        let id = crate::params::ParamId(i);
        if !grad.all_finite() {
            return Err(Error::NonFiniteGrad {
                param: params.name(id).to_string(),
            });
        }
        if grad.shape() != params.get(id).shape() {
            return Err(Error::ShapeMismatch {
                op: "adamw_step",
                lhs: params.get(id).shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let lr = T::from_f64(cfg.lr);
    let eps = T::from_f64(cfg.eps);
    let wd = T::from_f64(cfg.weight_decay);
    let bias1 = T::ONE - T::from_f64(cfg.beta1).powi(t);
    let bias2 = T::ONE - T::from_f64(cfg.beta2).powi(t);
    for (i, grad) in grads.grads().iter().enumerate() {
        let id = crate::params::ParamId(i);
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let value = params.get_mut(id);
        for (((p, &g), mv), vv) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let decay = lr * wd * *p;
            *mv = b1 * *mv + (T::ONE - b1) * g;
            *vv = b2 * *vv + (T::ONE - b2) * g * g;
            let mhat = *mv / bias1;
            let vhat = *vv / bias2;
            *p = *p - lr * mhat / (vhat.sqrt() + eps) - decay;
        }
    }
    Ok(())
}

/// Cosine annealing:
/// `lr_min + 0.5 (lr_max - lr_min)(1 + cos(pi * step / total))`.
/// A zero-length schedule stays at `lr_max`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if step > total_steps {
        return Err(Error::StepOutOfRange {
            step,
            total: total_steps,
        });
    }
    if total_steps == 0 {
        return Ok(lr_max);
    }
    let phase = core::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + libm::cos(phase)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamSet;

    fn one_param(value: f64) -> (ParamSet<f64>, crate::params::ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::full(&[1], value));
        (ps, id)
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let (mut ps, id) = one_param(1.5);
        let grads = ps.zero_grads();
        let mut st = AdamWState::new(&ps);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        adamw_step(&mut ps, &grads, &mut st, &cfg).unwrap();
        assert_eq!(ps.get(id).data()[0], 1.5);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn single_step_matches_hand_derivation() {
        // Published update equations evaluated by hand for one scalar:
        // m1 = 0.1 g, v1 = 0.001 g^2, mhat = g, vhat = g^2,
        // p1 = p0 - lr * g/(|g| + eps) - lr * wd * p0
        let (mut ps, id) = one_param(2.0);
        let mut grads = ps.zero_grads();
        grads.accumulate(id, &Tensor::full(&[1], 0.5));
        let mut st = AdamWState::new(&ps);
        let cfg = AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        };
        adamw_step(&mut ps, &grads, &mut st, &cfg).unwrap();
        let g: f64 = 0.5;
        let mhat = (0.1 * g) / (1.0 - 0.9);
        let vhat = (0.001 * g * g) / (1.0 - 0.999);
        let expect = 2.0 - 1e-3 * mhat / (vhat.sqrt() + 1e-8) - 1e-3 * 0.01 * 2.0;
        assert!((ps.get(id).data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn decoupled_decay_shrinks_by_lr_lambda_value() {
        let (mut ps, id) = one_param(4.0);
        let grads = ps.zero_grads();
        let mut st = AdamWState::new(&ps);
        let cfg = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.1,
            ..Default::default()
        };
        adamw_step(&mut ps, &grads, &mut st, &cfg).unwrap();
        assert!((ps.get(id).data()[0] - (4.0 - 0.01 * 0.1 * 4.0)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut ps, id) = one_param(1.0);
        let mut grads = ps.zero_grads();
        grads.accumulate(id, &Tensor::full(&[1], f64::NAN));
        let mut st = AdamWState::new(&ps);
        match adamw_step(&mut ps, &grads, &mut st, &AdamWConfig::default()) {
            Err(Error::NonFiniteGrad { param }) => assert_eq!(param, "w"),
            other => panic!("expected NonFiniteGrad, got {other:?}"),
        }
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 100, 1e-4, 1e-6).unwrap(), 1e-4);
        assert!((cosine_lr(100, 100, 1e-4, 1e-6).unwrap() - 1e-6).abs() < 1e-18);
        let mid = cosine_lr(50, 100, 1e-4, 1e-6).unwrap();
        assert!((mid - (1e-4 + 1e-6) / 2.0).abs() < 1e-18);
    }

    #[test]
    fn cosine_rejects_out_of_range() {
        assert!(matches!(
            cosine_lr(101, 100, 1e-4, 0.0),
            Err(Error::StepOutOfRange { .. })
        ));
    }

    #[test]
    fn cosine_zero_length_schedule() {
        assert_eq!(cosine_lr(0, 0, 1e-4, 1e-6).unwrap(), 1e-4);
    }
}
