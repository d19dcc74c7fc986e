//! Inverted dropout: training scales survivors by 1/(1-rate) so inference
//! is an exact identity.

use rand::Rng;

use crate::error::{Result, UdetError};
use crate::scalar::Scalar;
use crate::tape::{Rule, Tape, VarId};
use crate::tensor::Tensor4;

use super::Mode;

impl<E: Scalar> Tape<E> {
    pub fn dropout(
        &mut self,
        x: VarId,
        rate: f64,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<VarId> {
        self.check_owned(x, "dropout")?;
        if !(0.0..1.0).contains(&rate) {
            return Err(UdetError::InvalidArgument(format!("dropout rate {rate} not in [0,1)")));
        }
        if !mode.applies_dropout() || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = E::of(1.0 / (1.0 - rate));
        let n = self.value(x).numel();
        let mask: Vec<E> = (0..n)
            .map(|_| if rng.random::<f64>() < rate { E::zero() } else { keep_scale })
            .collect();
        let shape = self.shape(x);
        let out = {
            let xd = self.value(x).data();
            Tensor4::from_fn(shape, |i| xd[i] * mask[i])
        };
        let req = self.var_requires_grad(x);
        Ok(self.record(out, req, || Rule::Dropout { x: x.idx, mask }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rate_zero_and_infer_are_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor4::full(Shape4::new(1, 1, 4, 4), 2.0));
        let a = tape.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
        let b = tape.dropout(x, 0.9, Mode::Infer, &mut rng).unwrap();
        assert_eq!(a, x);
        assert_eq!(b, x);
        assert_eq!(tape.num_nodes(), 0);
    }

    #[test]
    fn half_rate_preserves_mean_and_zero_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut tape = Tape::<f32>::new();
        let n = 1_000_000usize;
        let x = tape.leaf(Tensor4::full(Shape4::new(1, 1, 1000, 1000), 1.0));
        let y = tape.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
        let data = tape.value(y).data();
        let mean: f64 = data.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let zeros = data.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        assert!((0.99..=1.01).contains(&mean), "mean {mean}");
        assert!((0.498..=0.502).contains(&zeros), "zero fraction {zeros}");
    }
}
