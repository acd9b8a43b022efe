//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// First and second moment accumulators mirroring a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first: ParamStore,
    second: ParamStore,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &ParamStore {
        &self.first
    }

    pub fn second_moment(&self) -> &ParamStore {
        &self.second
    }
}

/// Applies one Adam update in place.
///
/// A step with non-finite gradients, or one whose update overflows the
/// parameters, is rejected and leaves both `params` and `state` untouched.
pub fn adam_step(params: &mut ParamStore, grads: &ParamStore, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    params.check_same_layout(grads)?;
    params.check_same_layout(&state.first)?;
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::optimization(name, "non-finite gradient entry"));
    }

    let mut next_params = params.clone();
    let mut next = state.clone();
    next.step += 1;
    let t = next.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);

    let moments = next.first.iter_mut().zip(next.second.iter_mut());
    for (((_, p), (_, g)), ((_, m), (_, v))) in next_params.iter_mut().zip(grads.iter()).zip(moments) {
        for (((pi, &gi), mi), vi) in p
            .data
            .iter_mut()
            .zip(&g.data)
            .zip(m.data.iter_mut())
            .zip(v.data.iter_mut())
        {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *pi -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    if let Some(name) = next_params.first_non_finite() {
        return Err(Error::optimization(name, "update produced non-finite parameters"));
    }
    *params = next_params;
    *state = next;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Tensor;

    fn scalar(name: &str, v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, Tensor::new(vec![1], vec![v]).unwrap()).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar("w", 0.0);
        let g = scalar("w", 1.0);
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &g, &mut state, &AdamConfig::with_lr(1e-4)).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let expected = -1e-4 / (1.0 + 1e-8);
        assert_eq!(p.get("w").unwrap().data[0], expected);
        assert!((expected + 1e-4).abs() < 1e-11);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = scalar("w", 0.75);
        let g = scalar("w", 0.0);
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &g, &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(p.get("w").unwrap().data[0], 0.75);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn two_step_trace() {
        let cfg = AdamConfig::default();
        let mut p = scalar("w", 0.0);
        let g = scalar("w", 1.0);
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &g, &mut state, &cfg).unwrap();
        adam_step(&mut p, &g, &mut state, &cfg).unwrap();

        // hand-executed: m1 = 0.1, v1 = 0.001; m2 = 0.19, v2 = 0.001999
        let m1: f64 = 0.1;
        let v1: f64 = 0.001;
        let p1 = -1e-4 * (m1 / 0.1) / ((v1 / 0.001).sqrt() + 1e-8);
        let m2 = 0.9 * m1 + 0.1;
        let v2 = 0.999 * v1 + 0.001;
        let p2 = p1 - 1e-4 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.998001)).sqrt() + 1e-8);
        assert!((p.get("w").unwrap().data[0] - p2).abs() < 1e-12);
        assert!((p2 + 2e-4).abs() < 1e-10);
    }

    #[test]
    fn non_finite_gradient_names_layer_and_leaves_state() {
        let mut p = scalar("layer3.bias", 1.0);
        let g = scalar("layer3.bias", f64::NAN);
        let mut state = AdamState::new(&p);
        let err = adam_step(&mut p, &g, &mut state, &AdamConfig::default()).unwrap_err();
        match err {
            Error::Optimization { location, .. } => assert_eq!(location, "layer3.bias"),
            other => panic!("unexpected error {other}"),
        }
        assert_eq!(state.step(), 0);
        assert_eq!(p.get("layer3.bias").unwrap().data[0], 1.0);
    }

    #[test]
    fn overflowing_update_is_rejected() {
        let mut p = scalar("w", 0.0);
        let g = scalar("w", 1.0);
        let mut state = AdamState::new(&p);
        let cfg = AdamConfig::with_lr(f64::MAX);
        adam_step(&mut p, &g, &mut state, &cfg).unwrap();
        let before = p.get("w").unwrap().data[0];
        let err = adam_step(&mut p, &g, &mut state, &cfg).unwrap_err();
        assert!(matches!(err, Error::Optimization { .. }), "{err}");
        assert_eq!(state.step(), 1);
        assert_eq!(p.get("w").unwrap().data[0], before);
    }
}
