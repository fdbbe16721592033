//! Parameter initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

/// He initialization: zero-mean normal entries with variance `2 / fan_in`,
/// reproducible for a given seed.
pub fn init_kaiming(shape: &[usize], fan_in: usize, seed: u64) -> Tensor {
    assert!(fan_in > 0, "fan_in must be positive");
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| normal.sample(&mut rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("numel matches shape")
}
