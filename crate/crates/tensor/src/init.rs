//! Parameter initialisers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Scalar, Tensor};

pub fn normal<T: Scalar, R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Glorot-uniform for a `[fan_in, fan_out]` matrix.
pub fn xavier<T: Scalar, R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| T::of(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("length matches shape")
}

pub fn uniform<T: Scalar, R: Rng>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(-limit..=limit))).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}
