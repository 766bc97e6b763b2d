//! Named parameter collection with deterministic iteration order.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// All trainable tensors of a model, keyed by dotted path names. Iteration is
/// lexicographic by name, which fixes the update order of the optimizer.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor under a unique name. The tensor is marked trainable.
    pub fn insert(&mut self, name: &str, mut t: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        t.requires_grad = true;
        self.params.insert(name.to_string(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }

    /// Names in lexicographic order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn accumulate_grad(&mut self, name: &str, delta: &[f64]) -> Result<()> {
        let t = self.get_mut(name)?;
        if delta.len() != t.numel() {
            return Err(Error::Shape(format!(
                "gradient length {} vs parameter {name:?} size {}",
                delta.len(),
                t.numel()
            )));
        }
        t.accumulate_grad(delta);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for t in self.params.values_mut() {
            t.zero_grad();
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for t in self.params.values_mut() {
            if let Some(g) = &mut t.grad {
                for v in g.iter_mut() {
                    *v *= factor;
                }
            }
        }
    }
}
