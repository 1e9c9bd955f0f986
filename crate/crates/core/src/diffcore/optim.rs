//! Named parameter storage and the bias-corrected adaptive-moment update.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct ParamSlot {
    pub value: Tensor,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Named parameter tensors plus per-parameter optimizer moments and a step
/// counter. Iteration order is name order, so updates are deterministic.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterStore {
    pub(crate) slots: BTreeMap<String, ParamSlot>,
    pub step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.slots.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name '{name}'")));
        }
        let len = value.len();
        self.slots.insert(
            name.to_string(),
            ParamSlot { value, m: vec![0.0; len], v: vec![0.0; len] },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.slots
            .get(name)
            .map(|s| &s.value)
            .ok_or_else(|| Error::invalid(format!("unknown parameter '{name}'")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn value_count(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter '{name}'")))?;
        if slot.value.shape() != value.shape() {
            return Err(Error::shape(
                "set_value",
                format!("{:?}", slot.value.shape()),
                format!("{:?}", value.shape()),
            ));
        }
        slot.value = value;
        Ok(())
    }
}

/// Standard bias-corrected adaptive-moment update, in place. Parameters
/// without a gradient entry are treated as zero-gradient (moments decay).
pub fn adam_step(
    store: &mut ParameterStore,
    gradients: &BTreeMap<String, Tensor>,
    cfg: &AdamConfig,
) -> Result<()> {
    for name in gradients.keys() {
        if !store.slots.contains_key(name) {
            return Err(Error::Training(format!("gradient for unknown parameter '{name}'")));
        }
    }
    store.step += 1;
    let t = store.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for (name, slot) in store.slots.iter_mut() {
        let zero;
        let grad = match gradients.get(name) {
            Some(g) => {
                if g.shape() != slot.value.shape() {
                    return Err(Error::shape(
                        format!("gradient '{name}'").as_str(),
                        format!("{:?}", slot.value.shape()),
                        format!("{:?}", g.shape()),
                    ));
                }
                g
            }
            None => {
                zero = Tensor::zeros(slot.value.rows, slot.value.cols);
                &zero
            }
        };
        for (i, &g) in grad.data.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::Training(format!("non-finite gradient in parameter '{name}'")));
            }
            slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
            slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = slot.m[i] / bc1;
            let v_hat = slot.v[i] / bc2;
            slot.value.data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::new(1, 1, vec![1.5]).unwrap()).unwrap();
        // Seed a nonzero moment, then feed a zero gradient.
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::new(1, 1, vec![1.0]).unwrap());
        adam_step(&mut store, &grads, &AdamConfig { lr: 0.0, ..Default::default() }).unwrap();
        let m_before = store.slots["w"].m[0];
        grads.insert("w".to_string(), Tensor::new(1, 1, vec![0.0]).unwrap());
        adam_step(&mut store, &grads, &AdamConfig { lr: 0.0, ..Default::default() }).unwrap();
        assert_abs_diff_eq!(store.slots["w"].m[0], 0.9 * m_before, epsilon = 1e-15);
        assert_abs_diff_eq!(store.get("w").unwrap().data[0], 1.5, epsilon = 1e-15);
    }

    #[test]
    fn constant_gradient_matches_hand_computed_trajectory() {
        let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::new(1, 1, vec![0.0]).unwrap()).unwrap();
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::new(1, 1, vec![1.0]).unwrap());

        // Hand arithmetic, bias-corrected.
        let mut w = 0.0;
        let mut m = 0.0;
        let mut v = 0.0;
        for t in 1..=3u32 {
            m = 0.9 * m + 0.1;
            v = 0.999 * v + 0.001;
            let m_hat = m / (1.0 - 0.9f64.powi(t as i32));
            let v_hat = v / (1.0 - 0.999f64.powi(t as i32));
            w -= 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
            adam_step(&mut store, &grads, &cfg).unwrap();
            assert_abs_diff_eq!(store.get("w").unwrap().data[0], w, epsilon = 1e-14);
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let cfg = AdamConfig { lr: 0.05, ..Default::default() };
        let target = [0.7, -1.2, 0.3];
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::new(1, 3, vec![5.0, -5.0, 5.0]).unwrap()).unwrap();
        for _ in 0..2000 {
            let w = store.get("w").unwrap().clone();
            let grad: Vec<f64> = w.data.iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
            let mut grads = BTreeMap::new();
            grads.insert("w".to_string(), Tensor::new(1, 3, grad).unwrap());
            adam_step(&mut store, &grads, &cfg).unwrap();
        }
        for (x, t) in store.get("w").unwrap().data.iter().zip(&target) {
            assert!((x - t).abs() < 1e-3, "{x} vs {t}");
        }
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut store = ParameterStore::new();
        store.insert("layer.weight", Tensor::new(1, 1, vec![0.0]).unwrap()).unwrap();
        let mut grads = BTreeMap::new();
        grads.insert("layer.weight".to_string(), Tensor::new(1, 1, vec![f64::NAN]).unwrap());
        let err = adam_step(&mut store, &grads, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("layer.weight"), "{err}");
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::zeros(1, 1)).unwrap();
        assert!(store.insert("w", Tensor::zeros(1, 1)).is_err());
    }
}
