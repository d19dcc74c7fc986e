//! Shared builders for the kernel benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use udet_core::{Shape4, Tensor4};

pub fn random_tensor(shape: Shape4, seed: u64) -> Tensor4<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_fn(shape, |_| rng.random::<f32>() * 2.0 - 1.0)
}
