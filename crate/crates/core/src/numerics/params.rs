use std::collections::BTreeMap;

use crate::error::{invalid, Error, Result};
use crate::numerics::Tensor;

/// A trainable tensor together with its gradient and Adam moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    m: Tensor,
    v: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Param {
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            value,
        }
    }
}

/// Named parameters in a deterministic (sorted) order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    step: u64,
}

impl PartialEq for ParamStore {
    /// Two stores are equal when names, shapes and value bits match. Gradients and
    /// optimizer moments are transient and not compared.
    fn eq(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((na, a), (nb, b))| na == nb && a.value.bitwise_eq(&b.value))
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return invalid(format!("duplicate parameter name `{name}`"));
        }
        self.params.insert(name, Param::new(value));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn value(&self, name: &str) -> &Tensor {
        &self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self
            .params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .value
    }

    pub fn grad(&self, name: &str) -> &Tensor {
        &self.params[name].grad
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Param {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    /// Adds `delta` into the gradient of `name`.
    pub fn accumulate(&mut self, name: &str, delta: &Tensor) {
        let p = self.param_mut(name);
        debug_assert_eq!(p.grad.shape(), delta.shape(), "gradient shape for {name}");
        for (g, d) in p.grad.data_mut().iter_mut().zip(delta.data()) {
            *g += d;
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Number of scalars whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, p)| p.value.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in self.params.values_mut() {
            p.grad.scale(factor);
        }
    }

    /// Number of optimizer steps taken.
    /// Clears Adam moments and the step counter, keeping values.
    pub fn reset_optimizer(&mut self) {
        for p in self.params.values_mut() {
            p.m.fill(0.0);
            p.v.fill(0.0);
        }
        self.step = 0;
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Steps of linear warmup from 0 to `learning_rate`; 0 disables warmup.
    pub warmup_steps: u64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            warmup_steps: 0,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return invalid(format!(
                "Adam betas must lie in [0, 1), got {} / {}",
                self.beta1, self.beta2
            ));
        }
        if !(self.epsilon > 0.0) {
            return invalid(format!("epsilon must be positive, got {}", self.epsilon));
        }
        Ok(())
    }

    /// Learning rate for the 1-based optimizer step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            self.learning_rate * step as f64 / self.warmup_steps as f64
        } else {
            self.learning_rate
        }
    }
}

/// One bias-corrected Adam update over every parameter; gradients are zeroed afterwards.
pub fn adam_step(store: &mut ParamStore, cfg: &OptimConfig) -> Result<()> {
    adam_step_filtered(store, cfg, |_| true)
}

/// Adam update restricted to parameters for which `trainable(name)` holds. Other
/// parameters are left untouched (values and moments), though their gradients are
/// still cleared.
pub fn adam_step_filtered(
    store: &mut ParamStore,
    cfg: &OptimConfig,
    trainable: impl Fn(&str) -> bool,
) -> Result<()> {
    cfg.validate()?;
    // Validate everything before mutating anything.
    for (name, p) in &store.params {
        if trainable(name) && !p.grad.all_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    store.step += 1;
    let t = store.step;
    let lr = cfg.lr_at(t);
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (name, p) in store.params.iter_mut() {
        if trainable(name) {
            let Param { value, grad, m, v } = p;
            for (((x, &g), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        p.grad.fill(0.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::scalar(x)).unwrap();
        s
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut s = scalar_store(1.5);
        let before = s.clone();
        adam_step(&mut s, &OptimConfig::default()).unwrap();
        assert_eq!(s, before);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_update_is_learning_rate_sized() {
        // m1 = 0.1, v1 = 0.001; bias-corrected both become 1, so the step is lr / (1 + eps).
        let cfg = OptimConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut s = scalar_store(0.0);
        s.accumulate("x", &Tensor::scalar(1.0));
        adam_step(&mut s, &cfg).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((s.value("x").data()[0] - expected).abs() < 1e-15);
        assert_eq!(s.grad("x").data()[0], 0.0);
        // constant gradient keeps the step at lr
        s.accumulate("x", &Tensor::scalar(1.0));
        adam_step(&mut s, &cfg).unwrap();
        assert!((s.value("x").data()[0] - 2.0 * expected).abs() < 1e-12);
    }

    #[test]
    fn identical_stores_stay_identical() {
        let mut a = scalar_store(0.3);
        let mut b = scalar_store(0.3);
        for i in 0..5 {
            let g = Tensor::scalar(0.1 * i as f64 - 0.2);
            a.accumulate("x", &g);
            b.accumulate("x", &g);
            adam_step(&mut a, &OptimConfig::default()).unwrap();
            adam_step(&mut b, &OptimConfig::default()).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_aborts_and_names_parameter() {
        let mut s = scalar_store(1.0);
        s.insert("y", Tensor::scalar(2.0)).unwrap();
        s.accumulate("x", &Tensor::scalar(1.0));
        s.accumulate("y", &Tensor::scalar(f64::NAN));
        let before = s.clone();
        let err = adam_step(&mut s, &OptimConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "y"));
        assert_eq!(s, before);
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn filtered_step_skips_frozen() {
        let mut s = scalar_store(1.0);
        s.insert("frozen", Tensor::scalar(2.0)).unwrap();
        s.accumulate("x", &Tensor::scalar(1.0));
        s.accumulate("frozen", &Tensor::scalar(1.0));
        adam_step_filtered(&mut s, &OptimConfig::default(), |n| n != "frozen").unwrap();
        assert_eq!(s.value("frozen").data()[0].to_bits(), 2.0f64.to_bits());
        assert_ne!(s.value("x").data()[0], 1.0);
    }

    #[test]
    fn config_validation() {
        let bad = OptimConfig {
            beta1: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimConfig {
            epsilon: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn warmup_is_linear() {
        let cfg = OptimConfig {
            learning_rate: 1.0,
            warmup_steps: 4,
            ..Default::default()
        };
        assert_eq!(cfg.lr_at(1), 0.25);
        assert_eq!(cfg.lr_at(4), 1.0);
        assert_eq!(cfg.lr_at(100), 1.0);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = scalar_store(1.0);
        assert!(s.insert("x", Tensor::scalar(0.0)).is_err());
    }
}
