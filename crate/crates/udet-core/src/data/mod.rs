//! Dataset handling: samples, manifests, volume conversion, and
//! deterministic train/test/fold partitioning.

pub mod augment;
pub mod mhd;
pub mod phantom;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, UdetError};
use crate::metrics::BinaryMask;
use crate::tensor::{Shape4, Tensor4};
use mhd::{MhdData, MhdVolume};

/// Quantization scale when storing float images as 16-bit volumes.
const IMAGE_QUANT: f64 = 1000.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMeta {
    pub id: String,
    pub diameter_mm: Option<f64>,
    pub attached: Option<bool>,
}

/// One slice: normalized float image paired with its binary ground truth.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor4<f32>,
    pub mask: BinaryMask,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn new(image: Tensor4<f32>, mask: BinaryMask, meta: SampleMeta) -> Result<Self> {
        let s = image.shape();
        if s.n != 1 || s.c != 1 {
            return Err(UdetError::shape("sample", format!("image must be (1,1,h,w), got {s}")));
        }
        if (s.h, s.w) != (mask.height(), mask.width()) {
            return Err(UdetError::shape(
                "sample",
                format!("image {}x{} vs mask {}x{}", s.h, s.w, mask.height(), mask.width()),
            ));
        }
        if !image.is_finite() {
            return Err(UdetError::Data(format!("non-finite image values in {}", meta.id)));
        }
        Ok(Sample { image, mask, meta })
    }

    pub fn size(&self) -> (usize, usize) {
        let s = self.image.shape();
        (s.h, s.w)
    }

    /// Quantize the [0,1] image into a 16-bit volume (1 mm spacing).
    pub fn image_volume(&self) -> MhdVolume {
        let s = self.image.shape();
        let vals: Vec<i16> = self
            .image
            .data()
            .iter()
            .map(|&v| ((v as f64).clamp(0.0, 1.0) * IMAGE_QUANT).round() as i16)
            .collect();
        MhdVolume::new((s.w, s.h, 1), [1.0, 1.0, 1.0], MhdData::I16(vals)).expect("image volume")
    }

    pub fn mask_volume(&self) -> MhdVolume {
        MhdVolume::new(
            (self.mask.width(), self.mask.height(), 1),
            [1.0, 1.0, 1.0],
            MhdData::U8(self.mask.data().to_vec()),
        )
        .expect("mask volume")
    }

    /// Rebuild a sample from stored volumes: the image is min-max normalized
    /// to [0,1] per slice, the mask must be strictly binary.
    pub fn from_volumes(image: &MhdVolume, mask: &MhdVolume, meta: SampleMeta) -> Result<Sample> {
        if image.dims != mask.dims {
            return Err(UdetError::shape(
                "sample",
                format!("image dims {:?} vs mask dims {:?}", image.dims, mask.dims),
            ));
        }
        if image.dims.2 != 1 {
            return Err(UdetError::Data(format!(
                "expected single-slice volumes, got nz={}",
                image.dims.2
            )));
        }
        let (w, h) = (image.dims.0, image.dims.1);
        let raw = image.slice_values();
        let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = if hi > lo { hi - lo } else { 1.0 };
        let img = Tensor4::new(
            Shape4::new(1, 1, h, w),
            raw.iter().map(|&v| ((v - lo) / range) as f32).collect(),
        )?;
        let mask = volume_to_mask(mask)?;
        Sample::new(img, mask, meta)
    }
}

pub fn volume_to_mask(vol: &MhdVolume) -> Result<BinaryMask> {
    let MhdData::U8(bytes) = &vol.data else {
        return Err(UdetError::Data("mask volumes must be 8-bit".into()));
    };
    if vol.dims.2 != 1 {
        return Err(UdetError::Data("mask volumes must be single-slice".into()));
    }
    BinaryMask::new(vol.dims.1, vol.dims.0, bytes.clone())
}

/// One manifest row; paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub image_path: String,
    pub mask_path: String,
    pub diameter_mm: Option<f64>,
    pub attached: Option<bool>,
}

pub const MANIFEST_NAME: &str = "manifest.csv";
const MANIFEST_HEADER: &str = "id,image_path,mask_path,diameter_mm,attached";

pub fn write_manifest(dir: &Path, rows: &[ManifestRow]) -> Result<PathBuf> {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for r in rows {
        let d = r.diameter_mm.map(|v| format!("{v}")).unwrap_or_default();
        let a = r.attached.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", r.id, r.image_path, r.mask_path, d, a));
    }
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, out)?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == MANIFEST_HEADER => {}
        other => {
            return Err(UdetError::Data(format!(
                "manifest must start with {MANIFEST_HEADER:?}, found {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(UdetError::Data(format!("manifest line {} has {} fields", i + 2, parts.len())));
        }
        let diameter_mm = if parts[3].is_empty() {
            None
        } else {
            Some(parts[3].parse().map_err(|_| {
                UdetError::Data(format!("bad diameter {:?} on line {}", parts[3], i + 2))
            })?)
        };
        let attached = if parts[4].is_empty() {
            None
        } else {
            Some(parts[4].parse().map_err(|_| {
                UdetError::Data(format!("bad attached flag {:?} on line {}", parts[4], i + 2))
            })?)
        };
        rows.push(ManifestRow {
            id: parts[0].to_string(),
            image_path: parts[1].to_string(),
            mask_path: parts[2].to_string(),
            diameter_mm,
            attached,
        });
    }
    Ok(rows)
}

/// Load every sample listed in `dir/manifest.csv`.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let rows = read_manifest(&dir.join(MANIFEST_NAME))?;
    if rows.is_empty() {
        return Err(UdetError::Data(format!("empty manifest in {}", dir.display())));
    }
    rows.iter()
        .map(|r| {
            let image = mhd::read_mhd(&dir.join(&r.image_path))?;
            let mask = mhd::read_mhd(&dir.join(&r.mask_path))?;
            Sample::from_volumes(
                &image,
                &mask,
                SampleMeta {
                    id: r.id.clone(),
                    diameter_mm: r.diameter_mm,
                    attached: r.attached,
                },
            )
        })
        .collect()
}

/// Deterministic dataset partition: a shuffled test split plus near-equal
/// disjoint folds over the remaining training indices.
#[derive(Clone, Debug)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
}

pub fn split_dataset(n: usize, test_fraction: f64, folds: usize, seed: u64) -> Result<SplitPlan> {
    if n == 0 {
        return Err(UdetError::Data("cannot split an empty dataset".into()));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(UdetError::InvalidArgument(format!("test fraction {test_fraction}")));
    }
    if folds < 2 {
        return Err(UdetError::InvalidArgument("need at least 2 folds".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test >= n {
        return Err(UdetError::Data("test split would consume every sample".into()));
    }
    let test = idx[..n_test].to_vec();
    let train = idx[n_test..].to_vec();
    if train.len() < folds {
        return Err(UdetError::Data(format!(
            "{} training samples cannot form {folds} folds",
            train.len()
        )));
    }
    let base = train.len() / folds;
    let rem = train.len() % folds;
    let mut folds_out = Vec::with_capacity(folds);
    let mut at = 0usize;
    for f in 0..folds {
        let size = base + usize::from(f < rem);
        folds_out.push(train[at..at + size].to_vec());
        at += size;
    }
    Ok(SplitPlan { train, test, folds: folds_out })
}
