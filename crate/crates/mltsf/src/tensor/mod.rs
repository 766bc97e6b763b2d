//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain value type (shape + flat row-major storage).
//! Differentiable computation goes through a [`Graph`]: operations are
//! recorded on a tape as they execute, and [`Graph::backward`] replays the
//! tape in reverse. [`ParamStore`] holds named trainable tensors and
//! [`finite_diff_check`] validates analytic gradients against central
//! differences.

mod gradcheck;
mod graph;
mod params;

pub use gradcheck::{finite_diff_check, GradReport};
pub use graph::{Graph, Var};
pub use params::ParamStore;

use crate::error::{Error, Result};

/// Dense multi-dimensional array of f64 values, row-major.
///
/// `grad`, when present, always has the same number of elements as `values`.
/// Values may contain `-inf` (used as a masking sentinel ahead of softmax)
/// but never NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        if numel != values.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite { op: "tensor construction" });
        }
        Ok(Tensor { shape, values, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, values: vec![0.0; numel], requires_grad: false, grad: None }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], values: vec![v], requires_grad: false, grad: None }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// Scalar content of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() == 1 {
            Ok(self.values[0])
        } else {
            Err(Error::Shape(format!("item() on tensor of shape {:?}", self.shape)))
        }
    }

    /// Add `delta` into the gradient slot, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.values.len());
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.values.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}
