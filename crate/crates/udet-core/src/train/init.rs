//! Deterministic weight initialization from the model's per-parameter plan.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{InitKind, UdetModel};
use crate::params::ParamRegistry;
use crate::scalar::Scalar;

/// Fill every parameter: fan-scaled uniform weights, zero biases and running
/// means, unit scales, unit running variances and fusion weights. Bit-stable
/// for a fixed seed.
pub fn init_weights<E: Scalar>(model: &UdetModel, reg: &mut ParamRegistry<E>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (id, kind) in model.parameter_inits() {
        let t = reg.value_mut(id);
        match kind {
            InitKind::Zeros => {
                for v in t.data_mut() {
                    *v = E::zero();
                }
            }
            InitKind::Ones => {
                for v in t.data_mut() {
                    *v = E::one();
                }
            }
            InitKind::HeUniform { fan_in } => {
                let limit = (6.0 / fan_in as f64).sqrt();
                for v in t.data_mut() {
                    *v = E::of((rng.random::<f64>() * 2.0 - 1.0) * limit);
                }
            }
            InitKind::GlorotUniform { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in t.data_mut() {
                    *v = E::of((rng.random::<f64>() * 2.0 - 1.0) * limit);
                }
            }
        }
    }
}
