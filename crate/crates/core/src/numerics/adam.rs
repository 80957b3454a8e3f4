use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight decay (the L2 coefficient).
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params
            .entries()
            .iter()
            .map(|e| Tensor::zeros(e.value.shape()))
            .collect();
        Self {
            step_count: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update with decoupled weight decay:
/// `θ ← θ − lr·m̂/(√v̂ + ε) − lr·λ·θ`.
///
/// `lr` overrides `cfg.learning_rate` so schedulers can drive it.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &OptimConfig,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::dim(format!(
            "{} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (id, g) in params.ids().zip(grads) {
        if g.shape() != params.get(id).shape() {
            return Err(Error::dim(format!(
                "gradient {:?} for parameter {} {:?}",
                g.shape(),
                params.name(id),
                params.get(id).shape()
            )));
        }
        if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {} at element {pos} is {}",
                params.name(id),
                g.data()[pos]
            )));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, (theta, g)) in params.tensors_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, p) in theta.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *p -= lr * (mhat / (vhat.sqrt() + cfg.epsilon) + cfg.weight_decay * *p);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("theta", Tensor::scalar(value));
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_stationary() {
        let mut p = single(0.7);
        let mut st = AdamState::new(&p);
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        for _ in 0..5 {
            adam_step(&mut p, &[Tensor::scalar(0.0)], &mut st, &cfg, cfg.learning_rate).unwrap();
        }
        assert_eq!(p.entries()[0].value.item(), 0.7);
        assert_eq!(st.step_count, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g² after one step, so |Δθ| = η·|g|/(|g| + ε).
        for g in [0.5, -3.0, 1e-2] {
            let mut p = single(0.0);
            let mut st = AdamState::new(&p);
            let cfg = OptimConfig {
                weight_decay: 0.0,
                ..Default::default()
            };
            adam_step(&mut p, &[Tensor::scalar(g)], &mut st, &cfg, 1e-3).unwrap();
            let expected = 1e-3 * g.abs() / (g.abs() + 1e-8);
            let delta = p.entries()[0].value.item();
            assert!((delta.abs() - expected).abs() < 1e-15);
            assert_eq!(delta.signum(), -g.signum());
        }
    }

    #[test]
    fn decay_only_update_shrinks_by_lr_times_lambda() {
        let mut p = single(1.0);
        let mut st = AdamState::new(&p);
        let cfg = OptimConfig::default();
        adam_step(&mut p, &[Tensor::scalar(0.0)], &mut st, &cfg, 1e-3).unwrap();
        assert!((p.entries()[0].value.item() - (1.0 - 1e-3 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_aborts_and_names_parameter() {
        let mut p = single(1.0);
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &[Tensor::scalar(f64::NAN)], &mut st, &OptimConfig::default(), 1e-3)
            .unwrap_err();
        assert!(err.to_string().contains("theta"));
        assert_eq!(st.step_count, 0);
        assert_eq!(p.entries()[0].value.item(), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(OptimConfig::default().validate().is_ok());
        let bad = OptimConfig {
            beta1: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
