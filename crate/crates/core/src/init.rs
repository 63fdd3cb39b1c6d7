use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Seeded weight initializer: uniform in `±1/√fan_in`.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, shape: impl Into<Vec<usize>>, fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
        self.range(shape, -bound, bound)
    }

    pub fn range(&mut self, shape: impl Into<Vec<usize>>, lo: f32, hi: f32) -> Tensor {
        let shape = shape.into();
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| self.rng.random_range(lo..hi)).collect();
        Tensor::new(shape, data).expect("length matches shape")
    }
}
