//! Seeded randomness.
//!
//! Every random draw in the crate goes through [`Rng`], a ChaCha8 stream
//! cipher generator (`rand_chacha`). Its output for a given seed is fixed by
//! the algorithm, so a seed pins the whole training trajectory. Gaussian
//! draws use `rand_distr::StandardNormal` on top of it.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// An independent stream for `(seed, stream)`, e.g. one per class trainer.
pub fn derived(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_add(1));
    rng
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| standard_normal(rng)).collect())
        .expect("shape product matches length")
}

pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..=hi)
}

pub fn index(rng: &mut Rng, n: usize) -> usize {
    rng.random_range(0..n)
}

/// `count` distinct indices from `0..n`, uniformly, in random order.
pub fn sample_without_replacement(rng: &mut Rng, n: usize, count: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n, count).into_vec()
}

pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    use rand::seq::SliceRandom;
    items.shuffle(rng);
}
