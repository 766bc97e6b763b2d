//! Continuous sign language recognition with multi-scale local temporal
//! similarity fusion.
//!
//! The pipeline takes a `T x C` frame feature sequence, enriches every frame
//! from similarity-selected temporal neighborhoods at several window scales,
//! downsamples it with a convolutional gloss encoder, and trains the whole
//! stack with CTC. Everything numeric -- reverse-mode autodiff, convolution,
//! CTC, edit-distance scoring -- is implemented in this crate on plain `f64`
//! buffers, so every step is deterministic and checkable against brute-force
//! references.
//!
//! Entry points:
//! - [`tensor`]: the recorded-tape autodiff core.
//! - [`fusion`]: similarity-guided neighbor selection and fusion.
//! - [`encoder`]: the temporal gloss encoder.
//! - [`ctc`]: alignment-free sequence loss and greedy decoding.
//! - [`metrics`]: edit-distance word error rates.
//! - [`model`] / [`train`]: full pipeline assembly and optimization.
//! - [`data`]: synthetic dataset generation and the on-disk formats.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod ctc;
pub mod data;
pub mod encoder;
pub mod error;
pub mod fusion;
mod init;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
