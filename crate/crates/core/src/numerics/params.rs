//! Named trainable tensors and the Adam optimizer.

use std::collections::BTreeMap;

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::tensor::Tensor2D;

/// Gradients keyed by parameter name.
pub type Grads = BTreeMap<String, Tensor2D>;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor2D,
    pub grad: Tensor2D,
    pub adam_m: Tensor2D,
    pub adam_v: Tensor2D,
    /// Frozen entries receive gradients but are never updated.
    pub frozen: bool,
    has_grad: bool,
}

impl ParamEntry {
    fn new(value: Tensor2D, frozen: bool) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Tensor2D::zeros(r, c),
            adam_m: Tensor2D::zeros(r, c),
            adam_v: Tensor2D::zeros(r, c),
            frozen,
            has_grad: false,
        }
    }

    pub fn has_grad(&self) -> bool {
        self.has_grad
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
    step_count: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2D) {
        self.entries.insert(name.into(), ParamEntry::new(value, false));
    }

    pub fn insert_frozen(&mut self, name: impl Into<String>, value: Tensor2D) {
        self.entries.insert(name.into(), ParamEntry::new(value, true));
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        self.entry_mut(name)?.frozen = frozen;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor2D> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| invalid!("unknown parameter `{name}`"))
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| invalid!("unknown parameter `{name}`"))
    }

    pub fn entry_mut(&mut self, name: &str) -> Result<&mut ParamEntry> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| invalid!("unknown parameter `{name}`"))
    }

    /// Replaces a value, keeping optimizer state. Shapes must match.
    pub fn set(&mut self, name: &str, value: Tensor2D) -> Result<()> {
        let entry = self.entry_mut(name)?;
        if !entry.value.same_shape(&value) {
            return Err(shape_err!(
                "`{name}`: stored {:?}, given {:?}",
                entry.value.shape(),
                value.shape()
            ));
        }
        entry.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn set_step_count(&mut self, steps: u64) {
        self.step_count = steps;
    }

    /// Adds gradients into the matching entries.
    pub fn accumulate(&mut self, grads: &Grads) -> Result<()> {
        for (name, g) in grads {
            let entry = self.entry_mut(name)?;
            entry.grad.add_assign(g).map_err(|_| {
                shape_err!(
                    "gradient for `{name}` is {:?}, parameter is {:?}",
                    g.shape(),
                    entry.value.shape()
                )
            })?;
            entry.has_grad = true;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().fill(0.0);
            e.has_grad = false;
        }
    }

    /// SHA-256 over names and value bits of the selected entries.
    pub fn checksum(&self, mut filter: impl FnMut(&str, &ParamEntry) -> bool) -> String {
        let mut h = Sha256::new();
        for (name, e) in &self.entries {
            if !filter(name, e) {
                continue;
            }
            h.update(name.as_bytes());
            h.update((e.value.rows() as u64).to_le_bytes());
            h.update((e.value.cols() as u64).to_le_bytes());
            for v in e.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Copies values from `other`, which must carry exactly the same tensors.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, e) in &self.entries {
            let src = other
                .entries
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if !src.value.same_shape(&e.value) {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for tensor `{name}`: checkpoint {:?}, model {:?}",
                    src.value.shape(),
                    e.value.shape()
                )));
            }
        }
        if let Some(extra) = other.entries.keys().find(|k| !self.entries.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
        }
        for (name, e) in self.entries.iter_mut() {
            e.value = other.entries[name].value.clone();
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.00625,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok =
            self.lr > 0.0 && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(invalid!("bad Adam config {self:?}"))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepStatus {
    Applied { updated: usize },
    NoGradients,
}

/// One bias-corrected Adam update over every non-frozen entry that received
/// a gradient. Gradients are zeroed afterwards.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) -> Result<StepStatus> {
    cfg.validate()?;
    if !store.entries.values().any(|e| e.has_grad && !e.frozen) {
        warn!("adam_step called without gradients; skipping");
        store.zero_grads();
        return Ok(StepStatus::NoGradients);
    }
    store.step_count += 1;
    let t = store.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let mut updated = 0;
    for e in store.entries.values_mut() {
        if e.frozen || !e.has_grad {
            continue;
        }
        let g = e.grad.data();
        let m = e.adam_m.data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        }
        let v = e.adam_v.data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
        }
        let m = e.adam_m.data();
        let v = e.adam_v.data();
        for ((th, mi), vi) in e.value.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            *th -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        updated += 1;
    }
    store.zero_grads();
    Ok(StepStatus::Applied { updated })
}

/// Gaussian matrix with the given standard deviation.
pub fn randn(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Tensor2D {
    let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Tensor2D::new(rows, cols, data).expect("length matches")
}

/// Glorot-style scale for a `fan_in × fan_out` map.
pub fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor2D {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    randn(rng, fan_in, fan_out, std)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(theta: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("theta", Tensor2D::scalar(theta));
        s
    }

    fn grad(name: &str, g: f64) -> Grads {
        Grads::from([(name.to_string(), Tensor2D::scalar(g))])
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(1.0);
        s.accumulate(&grad("theta", 1.0)).unwrap();
        let status = adam_step(&mut s, &AdamConfig::default()).unwrap();
        assert_eq!(status, StepStatus::Applied { updated: 1 });
        let moved = 1.0 - s.get("theta").unwrap().data()[0];
        assert!((moved - 0.00625).abs() < 1e-9, "moved {moved}");
        assert_eq!(s.step_count(), 1);
        assert_eq!(s.entry("theta").unwrap().grad.data()[0], 0.0);
    }

    #[test]
    fn zero_gradient_keeps_value() {
        let mut s = scalar_store(2.5);
        for _ in 0..10 {
            s.accumulate(&grad("theta", 0.0)).unwrap();
            adam_step(&mut s, &AdamConfig::default()).unwrap();
        }
        assert_eq!(s.get("theta").unwrap().data()[0], 2.5);
    }

    #[test]
    fn identical_histories_identical_updates() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor2D::scalar(0.3));
        s.insert("b", Tensor2D::scalar(0.3));
        for g in [0.4, -1.2, 3.0] {
            let mut gr = grad("a", g);
            gr.insert("b".into(), Tensor2D::scalar(g));
            s.accumulate(&gr).unwrap();
            adam_step(&mut s, &AdamConfig::default()).unwrap();
        }
        assert_eq!(
            s.get("a").unwrap().data()[0].to_bits(),
            s.get("b").unwrap().data()[0].to_bits()
        );
    }

    #[test]
    fn empty_grads_is_noop() {
        let mut s = scalar_store(1.0);
        assert_eq!(
            adam_step(&mut s, &AdamConfig::default()).unwrap(),
            StepStatus::NoGradients
        );
        assert_eq!(s.step_count(), 0);
        assert_eq!(s.get("theta").unwrap().data()[0], 1.0);
    }

    #[test]
    fn frozen_entries_untouched() {
        let mut s = scalar_store(1.0);
        s.insert_frozen("base", Tensor2D::scalar(4.0));
        let mut g = grad("theta", 1.0);
        g.insert("base".into(), Tensor2D::scalar(1.0));
        s.accumulate(&g).unwrap();
        adam_step(&mut s, &AdamConfig::default()).unwrap();
        assert_eq!(s.get("base").unwrap().data()[0], 4.0);
    }

    #[test]
    fn deterministic_steps() {
        let run = || {
            let mut s = scalar_store(0.1);
            for i in 0..20 {
                s.accumulate(&grad("theta", (i as f64 * 0.7).sin())).unwrap();
                adam_step(&mut s, &AdamConfig::default()).unwrap();
            }
            s.get("theta").unwrap().data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let mut a = ParamStore::new();
        a.insert("idd.slots", Tensor2D::zeros(10, 4));
        let mut b = ParamStore::new();
        b.insert("idd.slots", Tensor2D::zeros(5, 4));
        let err = a.load_values_from(&b).unwrap_err().to_string();
        assert!(err.contains("idd.slots"), "{err}");
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig {
            beta1: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(AdamConfig {
            lr: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(AdamConfig::default().validate().is_ok());
    }
}
