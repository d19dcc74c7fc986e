//! `udet synth`: write phantom image/mask volume pairs plus a manifest.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use udet_core::data::mhd::write_mhd;
use udet_core::data::phantom::{generate_phantom, NoduleSpec};
use udet_core::data::{write_manifest, ManifestRow};

use crate::commands::ensure_out_dir;
use crate::{stamp, CliError, CliResult};

fn splitmix(seed: u64, i: u64) -> u64 {
    let mut z = seed.wrapping_add(i.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    out: &Path,
    count: usize,
    size: usize,
    seed: u64,
    nodules: usize,
    radius_range: (f64, f64),
    attach_fraction: f64,
) -> CliResult {
    if count == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    if size < 32 || size % 16 != 0 {
        return Err(CliError::Usage(format!(
            "--size {size} must be a multiple of 16, at least 32"
        )));
    }
    if !(0.0..=1.0).contains(&attach_fraction) {
        return Err(CliError::Usage("--attach-fraction must lie in [0, 1]".into()));
    }
    if !(radius_range.0 > 0.0 && radius_range.1 >= radius_range.0) {
        return Err(CliError::Usage(format!(
            "--radius-min/--radius-max {radius_range:?} invalid"
        )));
    }
    ensure_out_dir(out)?;

    let attach_count = (attach_fraction * count as f64).round() as usize;
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let spec = NoduleSpec {
            count: nodules,
            radius_range,
            attach_to_wall: i < attach_count,
            ..NoduleSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed, i as u64));
        let id = format!("sample_{i:04}");
        let sample = generate_phantom(&mut rng, size, &spec, &id).map_err(|e| {
            match e {
                udet_core::UdetError::InvalidArgument(m) => CliError::Usage(m),
                other => CliError::Run(other),
            }
        })?;

        let image_path = format!("{id}_img.mhd");
        let mask_path = format!("{id}_mask.mhd");
        write_mhd(&sample.image_volume(), &out.join(&image_path)).map_err(CliError::Run)?;
        write_mhd(&sample.mask_volume(), &out.join(&mask_path)).map_err(CliError::Run)?;
        rows.push(ManifestRow {
            id,
            image_path,
            mask_path,
            diameter_mm: sample.meta.diameter_mm,
            attached: sample.meta.attached,
        });
    }
    write_manifest(out, &rows).map_err(CliError::Run)?;
    stamp::write_stamp(out, "synth", seed, &format!("count={count} size={size}"))
        .map_err(CliError::Run)?;
    println!("wrote {count} samples ({size}x{size}) to {}", out.display());
    Ok(())
}
