//! Seeded random number generation.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::tensor::Tensor;

/// The generator used everywhere in the crate. Its full state serializes,
/// which checkpoints rely on for exact resume.
pub type Rng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// I.i.d. `N(0, 1)` draws filling `shape` in row-major order.
pub fn sample_standard_normal(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}
