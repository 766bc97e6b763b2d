//! Parameter initialization helpers shared by the model blocks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape, values).expect("uniform init values are finite")
}

pub(crate) fn zeros(shape: Vec<usize>) -> Tensor {
    Tensor::zeros(shape)
}

pub(crate) fn ones(shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, vec![1.0; n]).expect("ones are finite")
}
