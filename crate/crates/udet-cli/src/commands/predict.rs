//! `udet predict`: segment one stored slice, write the mask volume and an
//! overlay image.

use std::path::Path;

use udet_core::checkpoint::restore_model;
use udet_core::data::mhd::{read_mhd, write_mhd, MhdData, MhdVolume};
use udet_core::data::volume_to_mask;
use udet_core::metrics::binarize;
use udet_core::tensor::{Shape4, Tensor4};
use udet_core::UdetError;

use crate::commands::ensure_out_dir;
use crate::overlay::write_overlay_pgm;
use crate::{stamp, CliError, CliResult};

pub fn run(image: &Path, ckpt: &Path, out: &Path, gt_mask: Option<&Path>) -> CliResult {
    let (model, reg) = restore_model(ckpt).map_err(CliError::Run)?;
    let vol = read_mhd(image).map_err(CliError::Run)?;
    if vol.dims.2 != 1 {
        return Err(CliError::Run(UdetError::Data(format!(
            "expected a single-slice volume, got nz={}",
            vol.dims.2
        ))));
    }
    let (w, h) = (vol.dims.0, vol.dims.1);
    if h != model.input_size || w != model.input_size {
        return Err(CliError::Run(UdetError::Data(format!(
            "slice is {w}x{h}, checkpoint expects {size}x{size}",
            size = model.input_size
        ))));
    }

    // min-max normalize the slice
    let raw = vol.slice_values();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = if hi > lo { hi - lo } else { 1.0 };
    let img = Tensor4::new(
        Shape4::new(1, 1, h, w),
        raw.iter().map(|&v| ((v - lo) / range) as f32).collect(),
    )
    .map_err(CliError::Run)?;

    let prob = model.infer(&reg, &img).map_err(CliError::Run)?;
    let pred = binarize(&prob, 0.5).map_err(CliError::Run)?;

    let gt = gt_mask
        .map(|p| read_mhd(p).and_then(|v| volume_to_mask(&v)))
        .transpose()
        .map_err(CliError::Run)?;

    ensure_out_dir(out)?;
    let mask_vol = MhdVolume::new((w, h, 1), vol.spacing, MhdData::U8(pred.data().to_vec()))
        .map_err(CliError::Run)?;
    write_mhd(&mask_vol, &out.join("pred_mask.mhd")).map_err(CliError::Run)?;
    write_overlay_pgm(&out.join("overlay.pgm"), &img, gt.as_ref(), &pred)
        .map_err(CliError::Run)?;
    stamp::write_stamp(out, "predict", 0, &format!("image={}", image.display()))
        .map_err(CliError::Run)?;

    println!(
        "predicted {} positive pixels of {}; mask and overlay written to {}",
        pred.positives(),
        pred.len(),
        out.display()
    );
    Ok(())
}
