//! Segmentation evaluation: Dice similarity, sensitivity, positive
//! predictive value, mask binarization, and DSC distribution histograms.
//!
//! All three metrics are voxel-count ratios. Empty-denominator cases are
//! reported as flagged undefined values, never silently as 0, and callers
//! exclude them from aggregates with an explicit count.

use crate::error::{Result, UdetError};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Strictly binary 2-D mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask { height, width, data: vec![0; height * width] }
    }

    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(UdetError::shape(
                "binary_mask",
                format!("{}x{} with {} values", height, width, data.len()),
            ));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(UdetError::InvalidArgument("mask values must be 0 or 1".into()));
        }
        Ok(BinaryMask { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        debug_assert!(v <= 1);
        self.data[y * self.width + x] = v;
    }

    pub fn set_flat(&mut self, i: usize, v: u8) {
        debug_assert!(v <= 1);
        self.data[i] = v;
    }

    pub fn positives(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Mask as 0.0/1.0 floats (training targets, geometric checks).
    pub fn to_float<E: Scalar>(&self) -> Vec<E> {
        self.data.iter().map(|&v| if v == 1 { E::one() } else { E::zero() }).collect()
    }
}

/// Metric value with an explicit undefined state for empty denominators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MetricValue {
    Defined(f64),
    Undefined,
}

impl MetricValue {
    pub fn value(self) -> Option<f64> {
        match self {
            MetricValue::Defined(v) => Some(v),
            MetricValue::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, MetricValue::Defined(_))
    }

    /// CSV cell: fixed six decimals, or the literal `undefined`.
    pub fn csv_cell(self) -> String {
        match self {
            MetricValue::Defined(v) => format!("{v:.6}"),
            MetricValue::Undefined => "undefined".to_string(),
        }
    }
}

fn overlap_counts(gt: &BinaryMask, sv: &BinaryMask) -> Result<(usize, usize, usize)> {
    if gt.height != sv.height || gt.width != sv.width {
        return Err(UdetError::shape(
            "metrics",
            format!("{}x{} vs {}x{}", gt.height, gt.width, sv.height, sv.width),
        ));
    }
    let mut inter = 0usize;
    let mut g = 0usize;
    let mut s = 0usize;
    for (&a, &b) in gt.data.iter().zip(&sv.data) {
        g += a as usize;
        s += b as usize;
        inter += (a & b) as usize;
    }
    Ok((inter, g, s))
}

/// Dice similarity coefficient: 2|Gt ∩ Sv| / (|Gt| + |Sv|).
pub fn dsc(gt: &BinaryMask, sv: &BinaryMask) -> Result<MetricValue> {
    let (inter, g, s) = overlap_counts(gt, sv)?;
    if g + s == 0 {
        return Ok(MetricValue::Undefined);
    }
    Ok(MetricValue::Defined(2.0 * inter as f64 / (g + s) as f64))
}

/// Sensitivity: |Gt ∩ Sv| / |Gt|.
pub fn sen(gt: &BinaryMask, sv: &BinaryMask) -> Result<MetricValue> {
    let (inter, g, _) = overlap_counts(gt, sv)?;
    if g == 0 {
        return Ok(MetricValue::Undefined);
    }
    Ok(MetricValue::Defined(inter as f64 / g as f64))
}

/// Positive predictive value: |Gt ∩ Sv| / |Sv|.
pub fn ppv(gt: &BinaryMask, sv: &BinaryMask) -> Result<MetricValue> {
    let (inter, _, s) = overlap_counts(gt, sv)?;
    if s == 0 {
        return Ok(MetricValue::Undefined);
    }
    Ok(MetricValue::Defined(inter as f64 / s as f64))
}

/// Threshold a probability map (>= threshold becomes 1).
pub fn binarize_map(values: &[f64], height: usize, width: usize, threshold: f64) -> Result<BinaryMask> {
    if values.len() != height * width {
        return Err(UdetError::shape("binarize", format!("{} vs {}x{}", values.len(), height, width)));
    }
    let data = values.iter().map(|&v| u8::from(v >= threshold)).collect();
    BinaryMask::new(height, width, data)
}

/// Threshold a (1,1,h,w) probability tensor at the standard 0.5.
pub fn binarize<E: Scalar>(prob: &Tensor4<E>, threshold: f64) -> Result<BinaryMask> {
    let s = prob.shape();
    if s.n != 1 || s.c != 1 {
        return Err(UdetError::shape("binarize", format!("expected (1,1,h,w), got {s}")));
    }
    let vals: Vec<f64> = prob.data().iter().map(|v| v.as_f64()).collect();
    binarize_map(&vals, s.h, s.w, threshold)
}

/// One evaluation row: per-sample or aggregate.
#[derive(Clone, Debug)]
pub struct MetricsRecord {
    pub dsc: MetricValue,
    pub sen: MetricValue,
    pub ppv: MetricValue,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Uniform-bin histogram of DSC values over [0, 1]; 1.0 lands in the last
/// bin, so bin counts always sum to the input count.
pub fn dsc_histogram(values: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(UdetError::InvalidArgument("histogram needs bins >= 1".into()));
    }
    let mut counts = vec![0usize; bins];
    for &v in values {
        let i = ((v * bins as f64).floor() as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lo: i as f64 / bins as f64,
            hi: (i + 1) as f64 / bins as f64,
            count,
        })
        .collect())
}

/// Mean and population standard deviation of the defined values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub const METRICS_CSV_HEADER: &str = "epoch,fold,split,loss,dsc,sen,ppv";

pub fn metrics_csv_row(
    epoch: usize,
    fold: usize,
    split: &str,
    loss: f64,
    dsc: MetricValue,
    sen: MetricValue,
    ppv: MetricValue,
) -> String {
    format!(
        "{epoch},{fold},{split},{loss:.6},{},{},{}",
        dsc.csv_cell(),
        sen.csv_cell(),
        ppv.csv_cell()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_of(h: usize, w: usize, on: &[usize]) -> BinaryMask {
        let mut m = BinaryMask::zeros(h, w);
        for &i in on {
            m.set_flat(i, 1);
        }
        m
    }

    #[test]
    fn identical_masks_score_one() {
        let m = mask_of(4, 4, &[1, 2, 5]);
        assert_eq!(dsc(&m, &m).unwrap(), MetricValue::Defined(1.0));
        assert_eq!(sen(&m, &m).unwrap(), MetricValue::Defined(1.0));
        assert_eq!(ppv(&m, &m).unwrap(), MetricValue::Defined(1.0));
    }

    #[test]
    fn disjoint_masks_score_zero() {
        let a = mask_of(4, 4, &[0, 1]);
        let b = mask_of(4, 4, &[8, 9]);
        assert_eq!(dsc(&a, &b).unwrap(), MetricValue::Defined(0.0));
        assert_eq!(sen(&a, &b).unwrap(), MetricValue::Defined(0.0));
        assert_eq!(ppv(&a, &b).unwrap(), MetricValue::Defined(0.0));
    }

    #[test]
    fn half_overlap_hand_count() {
        // |Gt| = 4, |Sv| = 4, overlap 2
        let gt = mask_of(4, 4, &[0, 1, 2, 3]);
        let sv = mask_of(4, 4, &[2, 3, 4, 5]);
        assert_eq!(dsc(&gt, &sv).unwrap(), MetricValue::Defined(0.5));
        assert_eq!(sen(&gt, &sv).unwrap(), MetricValue::Defined(0.5));
        assert_eq!(ppv(&gt, &sv).unwrap(), MetricValue::Defined(0.5));
    }

    #[test]
    fn empty_denominators_flag_undefined() {
        let empty = BinaryMask::zeros(4, 4);
        let some = mask_of(4, 4, &[3]);
        assert_eq!(dsc(&empty, &empty).unwrap(), MetricValue::Undefined);
        assert_eq!(sen(&empty, &some).unwrap(), MetricValue::Undefined);
        assert_eq!(ppv(&some, &empty).unwrap(), MetricValue::Undefined);
        // dsc defined as soon as either side is nonempty
        assert_eq!(dsc(&empty, &some).unwrap(), MetricValue::Defined(0.0));
    }

    #[test]
    fn dice_identity_with_sen_ppv() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let mut gt = BinaryMask::zeros(16, 16);
            let mut sv = BinaryMask::zeros(16, 16);
            for i in 0..256 {
                if rng.random::<f64>() < 0.3 {
                    gt.set_flat(i, 1);
                }
                if rng.random::<f64>() < 0.3 {
                    sv.set_flat(i, 1);
                }
            }
            if gt.positives() == 0 || sv.positives() == 0 {
                continue;
            }
            let d = dsc(&gt, &sv).unwrap().value().unwrap();
            let s = sen(&gt, &sv).unwrap().value().unwrap();
            let p = ppv(&gt, &sv).unwrap().value().unwrap();
            if s + p > 0.0 {
                assert!((d - 2.0 * s * p / (s + p)).abs() < 1e-12);
            } else {
                assert_eq!(d, 0.0);
            }
            // symmetry properties
            assert_eq!(dsc(&gt, &sv).unwrap(), dsc(&sv, &gt).unwrap());
            assert_eq!(sen(&gt, &sv).unwrap(), ppv(&sv, &gt).unwrap());
        }
    }

    #[test]
    fn binarize_boundary_and_idempotence() {
        let half = binarize_map(&[0.5; 4], 2, 2, 0.5).unwrap();
        assert_eq!(half.positives(), 4);
        let below = binarize_map(&[0.49; 4], 2, 2, 0.5).unwrap();
        assert_eq!(below.positives(), 0);

        let vals = [0.1, 0.5, 0.7, 0.2];
        let once = binarize_map(&vals, 2, 2, 0.5).unwrap();
        let again = binarize_map(
            &once.data().iter().map(|&v| v as f64).collect::<Vec<_>>(),
            2,
            2,
            0.5,
        )
        .unwrap();
        assert_eq!(once, again);
    }

    #[test]
    fn histogram_edges_and_totals() {
        let h = dsc_histogram(&[1.0], 10).unwrap();
        assert_eq!(h[9].count, 1);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 1);

        let uniform: Vec<f64> = (0..10).map(|i| i as f64 / 10.0 + 0.05).collect();
        let h = dsc_histogram(&uniform, 10).unwrap();
        assert!(h.iter().all(|b| b.count == 1));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vals: Vec<f64> = (0..503).map(|_| rng.random::<f64>()).collect();
        let h = dsc_histogram(&vals, 7).unwrap();
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 503);
    }
}
