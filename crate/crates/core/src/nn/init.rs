use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{Dims, Real, Tensor4};

/// He-normal initialization for a (out, in, kh, kw) kernel: zero mean,
/// variance `2 / (in * kh * kw)`, deterministic in `seed`.
pub fn he_init<T: Real>(shape: Dims, seed: u64) -> Result<Tensor4<T>> {
    let fan_in = (shape.c * shape.h * shape.w).max(1);
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.len()).map(|_| T::lit(normal.sample(&mut rng))).collect();
    Tensor4::from_vec(shape, data)
}
