use rand::Rng as _;

use super::tensor::{Scalar, Tensor};
use crate::rng::Rng;

/// Glorot-uniform: `U(±sqrt(6 / (fan_in + fan_out)))`.
pub fn glorot<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(-limit..limit))).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}
