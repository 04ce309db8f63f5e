#![allow(dead_code)]

use cdqag_core::rng::SplitMix64;
use cdqag_vista::Tensor;

pub fn random(rng: &mut SplitMix64, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(-scale, scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn random_bits(rng: &mut SplitMix64, n: usize) -> Vec<bool> {
    (0..n).map(|_| rng.below(2) == 1).collect()
}

pub fn inner(a: &Tensor, b: &Tensor) -> f64 {
    a.dot(b).unwrap()
}
