use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::params::{Group, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub decay_per_epoch: f64,
    /// Coupled L2 penalty: `lambda * w` is added to each gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, decay_per_epoch: 0.96, weight_decay: 0.0 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps >= 0.0
            && self.decay_per_epoch > 0.0
            && self.decay_per_epoch <= 1.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// ADAM moments for the parameters of one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub group: Group,
    step: u64,
    epoch: u32,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, group: Group) -> Self {
        Self { config, group, step: 0, epoch: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn set_epoch(&mut self, epoch: u32) {
        self.epoch = epoch;
    }

    /// Learning rate after exponential decay for the current epoch.
    pub fn current_lr(&self) -> f64 {
        self.config.lr * self.config.decay_per_epoch.powi(self.epoch as i32)
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.first.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.second.get(name).map(Vec::as_slice)
    }

    /// One bias-corrected ADAM update of every parameter in `self.group`.
    /// Parameters of other groups are left untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        let names = params.names_in(self.group);
        for name in &names {
            let g = grads.get(name).ok_or_else(|| Error::MissingGradient(name.clone()))?;
            if g.shape() != params.value(name)?.shape() {
                return Err(Error::shape("adam_step", format!("gradient for `{name}` has wrong shape")));
            }
        }

        self.step += 1;
        let cfg = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let lr = self.current_lr();

        for name in names {
            let g = grads.get(&name).expect("checked above").data();
            let p = params.value_mut(&name)?.data_mut();
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
            let v = self.second.entry(name).or_insert_with(|| vec![0.0; p.len()]);
            for i in 0..p.len() {
                let gi = g[i] + cfg.weight_decay * p[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Tensor};

    fn scalar_store(value: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(value), Group::Supervised).unwrap();
        store.insert("other", Tensor::scalar(7.0), Group::Reinforcement).unwrap();
        store
    }

    /// Gradients of `coef * w` w.r.t. every parameter.
    fn linear_grads(store: &ParamStore, coef: f64) -> Gradients {
        let mut g = Graph::new();
        let w = g.param(store, "w").unwrap();
        g.param(store, "other").unwrap();
        let y = g.scale(w, coef);
        g.backward(y).unwrap()
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut store = scalar_store(1.5);
        let mut adam = AdamState::new(AdamConfig::default(), Group::Supervised);
        for _ in 0..5 {
            let grads = linear_grads(&store, 0.0);
            adam.step(&mut store, &grads).unwrap();
        }
        assert_eq!(store.value("w").unwrap().item(), 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig { lr: 1e-3, eps: 0.0, ..AdamConfig::default() };
        for coef in [3.7, -0.02] {
            let mut store = scalar_store(0.25);
            let mut adam = AdamState::new(cfg, Group::Supervised);
            let grads = linear_grads(&store, coef);
            adam.step(&mut store, &grads).unwrap();
            let moved = store.value("w").unwrap().item() - 0.25;
            assert!((moved + 1e-3 * coef.signum()).abs() < 1e-15, "moved {moved}");
        }
    }

    #[test]
    fn two_steps_match_manual_trace() {
        // Hand recurrence for g1 = 2.0 then g2 = -1.0 (the gradient of coef*w is coef).
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        let mut w = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (t, g) in [(1, 2.0f64), (2, -1.0)] {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }

        let cfg = AdamConfig { lr, beta1: b1, beta2: b2, eps, ..AdamConfig::default() };
        let mut store = scalar_store(1.0);
        let mut adam = AdamState::new(cfg, Group::Supervised);
        for coef in [2.0, -1.0] {
            let grads = linear_grads(&store, coef);
            adam.step(&mut store, &grads).unwrap();
        }
        assert!((store.value("w").unwrap().item() - w).abs() < 1e-12);
        assert_eq!(store.value("other").unwrap().item(), 7.0, "other group must not move");
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn missing_gradient_rejected() {
        let mut store = scalar_store(1.0);
        let mut g = Graph::new();
        let o = g.param(&store, "other").unwrap();
        let grads = g.backward(o).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), Group::Supervised);
        let err = adam.step(&mut store, &grads).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(ref n) if n == "w"));
    }

    #[test]
    fn learning_rate_decays_per_epoch() {
        let mut adam = AdamState::new(AdamConfig::default(), Group::Supervised);
        adam.set_epoch(2);
        assert!((adam.current_lr() - 1e-4 * 0.96 * 0.96).abs() < 1e-18);
    }
}
