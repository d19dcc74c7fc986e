//! Weighted binary cross-entropy and class-weight estimation.
//!
//! The positive term is weighted by the negative-to-positive voxel ratio of
//! the training masks, so sparse foreground classes are not drowned out.

use crate::error::{Result, UdetError};
use crate::metrics::BinaryMask;
use crate::scalar::Scalar;
use crate::tape::{Rule, Tape, VarId};
use crate::tensor::Tensor4;

/// Predictions are clamped to [CLAMP, 1-CLAMP] before the logs.
pub const PRED_CLAMP: f64 = 1e-7;

/// Voxel-mean weighted BCE of a clamped probability map against binary
/// targets: -(1/N) * sum(w_pos*y*log(p) + (1-y)*log(1-p)).
pub fn weighted_bce_value<E: Scalar>(pred: &[E], target: &[E], w_pos: E) -> E {
    debug_assert_eq!(pred.len(), target.len());
    let lo = E::of(PRED_CLAMP);
    let hi = E::one() - lo;
    let mut acc = E::zero();
    for (&p, &y) in pred.iter().zip(target) {
        let p = p.max(lo).min(hi);
        acc = acc + w_pos * y * p.ln() + (E::one() - y) * (E::one() - p).ln();
    }
    -acc / E::of(pred.len() as f64)
}

fn check_binary<E: Scalar>(target: &[E]) -> Result<()> {
    for &y in target {
        if y != E::zero() && y != E::one() {
            return Err(UdetError::InvalidArgument(format!(
                "target mask must be strictly binary, found {y}"
            )));
        }
    }
    Ok(())
}

impl<E: Scalar> Tape<E> {
    /// Scalar weighted-BCE loss; differentiable w.r.t. `pred`. `target` must
    /// hold strictly binary values.
    pub fn weighted_bce(&mut self, pred: VarId, target: VarId, w_pos: E) -> Result<VarId> {
        self.check_owned(pred, "weighted_bce")?;
        self.check_owned(target, "weighted_bce")?;
        let sp = self.shape(pred);
        let st = self.shape(target);
        if sp != st {
            return Err(UdetError::shape("weighted_bce", format!("{sp} vs {st}")));
        }
        if w_pos <= E::zero() {
            return Err(UdetError::InvalidArgument(format!(
                "class weight must be positive, got {w_pos}"
            )));
        }
        check_binary(self.value(target).data())?;
        let loss = weighted_bce_value(self.value(pred).data(), self.value(target).data(), w_pos);
        let req = self.var_requires_grad(pred);
        Ok(self.record(Tensor4::scalar(loss), req, || Rule::WeightedBce {
            pred: pred.idx,
            target: target.idx,
            w_pos,
            clamp: E::of(PRED_CLAMP),
        }))
    }
}

/// Pooled negative-to-positive voxel ratio over a set of training masks.
/// Zero positives is a degenerate dataset and errors; an all-positive set
/// returns the true ratio 0, which the trainer then rejects.
pub fn estimate_class_weight(masks: &[&BinaryMask]) -> Result<f64> {
    let mut pos = 0usize;
    let mut total = 0usize;
    for m in masks {
        pos += m.positives();
        total += m.len();
    }
    if pos == 0 {
        return Err(UdetError::Data("no positive voxels in training masks".into()));
    }
    Ok((total - pos) as f64 / pos as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn scalar_loss(p: f64, y: f64, w: f64) -> f64 {
        let mut tape = Tape::<f64>::new();
        let pred = tape.leaf(Tensor4::scalar(p));
        let target = tape.constant(Tensor4::scalar(y));
        let l = tape.weighted_bce(pred, target, w).unwrap();
        tape.value(l).data()[0]
    }

    #[test]
    fn unit_weight_positive_at_half_is_ln2() {
        assert!((scalar_loss(0.5, 1.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn weight_scales_positive_term_only() {
        assert!((scalar_loss(0.5, 1.0, 2.0) - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        // negative term unchanged by the weight
        assert!((scalar_loss(0.5, 0.0, 2.0) - scalar_loss(0.5, 0.0, 7.0)).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_negative_is_near_zero() {
        assert!(scalar_loss(1e-7, 0.0, 1.0) < 1e-6);
    }

    #[test]
    fn matches_unweighted_bce_at_unit_weight() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p: f64 = rng.random::<f64>() * 0.98 + 0.01;
            let y = if rng.random::<f64>() < 0.5 { 0.0 } else { 1.0 };
            let manual = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            assert!((scalar_loss(p, y, 1.0) - manual).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_strictly_increases_with_weight_when_positive_mispredicted() {
        let l1 = scalar_loss(0.7, 1.0, 1.0);
        let l2 = scalar_loss(0.7, 1.0, 2.0);
        let l3 = scalar_loss(0.7, 1.0, 4.0);
        assert!(l2 > l1 && l3 > l2);
    }

    #[test]
    fn rejects_non_binary_targets_and_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let pred = tape.leaf(Tensor4::scalar(0.5));
        let bad = tape.constant(Tensor4::scalar(0.25));
        assert!(tape.weighted_bce(pred, bad, 1.0).is_err());

        let wide = tape.constant(Tensor4::zeros(Shape4::new(1, 1, 1, 2)));
        assert!(tape.weighted_bce(pred, wide, 1.0).is_err());
    }

    #[test]
    fn class_weight_is_pooled_ratio() {
        let mut a = BinaryMask::zeros(64, 64);
        for i in 0..64 {
            a.set_flat(i, 1);
        }
        assert_eq!(estimate_class_weight(&[&a]).unwrap(), 63.0);

        let mut m1 = BinaryMask::zeros(10, 10);
        let mut m2 = BinaryMask::zeros(10, 10);
        for i in 0..10 {
            m1.set_flat(i, 1);
        }
        for i in 0..30 {
            m2.set_flat(i, 1);
        }
        assert_eq!(estimate_class_weight(&[&m1, &m2]).unwrap(), 4.0);
    }

    #[test]
    fn all_positive_returns_zero_ratio_and_no_positive_errors() {
        let mut m = BinaryMask::zeros(2, 2);
        for i in 0..4 {
            m.set_flat(i, 1);
        }
        assert_eq!(estimate_class_weight(&[&m]).unwrap(), 0.0);

        let empty = BinaryMask::zeros(2, 2);
        assert!(estimate_class_weight(&[&empty]).is_err());
    }
}
