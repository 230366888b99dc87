//! Named parameter storage with gradient buffers and an Adam optimizer.

use std::collections::BTreeMap;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{EmsError, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
struct Entry {
    value: Tensor,
    grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// A collection of named tensors with per-parameter gradient and Adam moment
/// buffers.
///
/// Names are ordered (`BTreeMap`), so every iteration over parameters is
/// deterministic — this matters for reproducible updates and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    entries: BTreeMap<String, Entry>,
    /// Adam step counter, shared by all parameters in the store.
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new parameter. Re-registering an existing name is an
    /// error.
    pub fn register(&mut self, name: &str, value: Tensor) -> Result<()> {
        if value.is_empty() {
            return Err(EmsError::invalid(format!("parameter '{name}' is empty")));
        }
        if self.entries.contains_key(name) {
            return Err(EmsError::invalid(format!(
                "parameter '{name}' registered twice"
            )));
        }
        let n = value.len();
        self.entries.insert(
            name.to_string(),
            Entry {
                value,
                grad: vec![0.0; n],
                m: vec![0.0; n],
                v: vec![0.0; n],
            },
        );
        Ok(())
    }

    fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries
            .get(name)
            .ok_or_else(|| EmsError::invalid(format!("unknown parameter '{name}'")))
    }

    fn entry_mut(&mut self, name: &str) -> Result<&mut Entry> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| EmsError::invalid(format!("unknown parameter '{name}'")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.entry(name)?.value)
    }

    /// Scalar value of a `[1]`-shaped parameter.
    pub fn get_scalar(&self, name: &str) -> Result<f64> {
        self.entry(name)?.value.item()
    }

    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let entry = self.entry_mut(name)?;
        if entry.value.shape() != value.shape() {
            return Err(EmsError::invalid(format!(
                "parameter '{name}': shape {:?} does not match registered {:?}",
                value.shape(),
                entry.value.shape()
            )));
        }
        entry.value = value;
        Ok(())
    }

    /// Clamps every element of a parameter to `[lo, hi]`.
    pub fn clamp_value(&mut self, name: &str, lo: f64, hi: f64) -> Result<()> {
        let entry = self.entry_mut(name)?;
        for v in entry.value.values_mut() {
            *v = v.clamp(lo, hi);
        }
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Parameter names in sorted order.
    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar elements across all parameters.
    pub fn element_count(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    // ------------------------------------------------------------- gradients

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            for g in e.grad.iter_mut() {
                *g = 0.0;
            }
        }
    }

    /// Adds `grads` (typically the map returned by `Graph::backward`) into
    /// the gradient buffers. Unknown names are an error; parameters absent
    /// from the map are left untouched.
    pub fn accumulate_grads(&mut self, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            let entry = self.entry_mut(name)?;
            if entry.value.shape() != g.shape() {
                return Err(EmsError::invalid(format!(
                    "gradient for '{name}' has shape {:?}, parameter is {:?}",
                    g.shape(),
                    entry.value.shape()
                )));
            }
            for (slot, &gv) in entry.grad.iter_mut().zip(g.values()) {
                *slot += gv;
            }
        }
        Ok(())
    }

    /// Global L2 norm of all gradient buffers.
    pub fn grad_norm(&self) -> f64 {
        let sum_sq: f64 = self
            .entries
            .values()
            .flat_map(|e| e.grad.iter())
            .map(|g| g * g)
            .sum();
        sum_sq.sqrt()
    }

    /// Scales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the pre-clip norm.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for e in self.entries.values_mut() {
                for g in e.grad.iter_mut() {
                    *g *= scale;
                }
            }
        }
        norm
    }

    /// One Adam update over every parameter using the accumulated gradients
    /// (β₁ = 0.9, β₂ = 0.999, ε = 1e-8, bias-corrected moments).
    ///
    /// A non-finite gradient is an error naming the offending parameter.
    pub fn adam_step(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(EmsError::invalid(format!(
                "adam step: learning rate must be positive and finite, got {lr}"
            )));
        }
        for (name, e) in self.entries.iter() {
            if e.grad.iter().any(|g| !g.is_finite()) {
                return Err(EmsError::numeric(format!(
                    "adam step: non-finite gradient for parameter '{name}'"
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for e in self.entries.values_mut() {
            for i in 0..e.grad.len() {
                let g = e.grad[i];
                e.m[i] = ADAM_BETA1 * e.m[i] + (1.0 - ADAM_BETA1) * g;
                e.v[i] = ADAM_BETA2 * e.v[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = e.m[i] / bc1;
                let v_hat = e.v[i] / bc2;
                e.value.values_mut()[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }

    /// Number of Adam steps taken so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    // ---------------------------------------------------------- graph bridge

    /// Registers this store's parameter `name` into a graph (or returns the
    /// existing node) with the store's current value.
    pub fn param_node(&self, g: &mut Graph, name: &str) -> Result<NodeId> {
        g.param(name, self.get(name)?.clone())
    }

    /// Overwrites every graph parameter's value with the store's current
    /// value. Call before re-running `forward` after an optimizer step.
    pub fn write_params(&self, g: &mut Graph) -> Result<()> {
        for name in g.param_names() {
            g.set_param(&name, self.get(&name)?.clone())?;
        }
        Ok(())
    }

    // ----------------------------------------------------------- persistence

    /// Copies of all parameter values, keyed by name.
    pub fn snapshot(&self) -> BTreeMap<String, Tensor> {
        self.entries
            .iter()
            .map(|(k, e)| (k.clone(), e.value.clone()))
            .collect()
    }

    /// Restores parameter values from a snapshot (names and shapes must
    /// match the registered set exactly). Moments and step counter are left
    /// untouched.
    pub fn restore(&mut self, snapshot: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, value) in snapshot {
            self.set_value(name, value.clone())?;
        }
        Ok(())
    }
}
