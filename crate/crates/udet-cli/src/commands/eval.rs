//! `udet eval`: per-sample metrics, aggregate, DSC histogram, and the
//! stratified table over a stored dataset.

use std::path::Path;

use udet_core::checkpoint::restore_model;
use udet_core::data::load_dataset;
use udet_core::report::evaluate_dataset;

use crate::commands::ensure_out_dir;
use crate::{stamp, CliError, CliResult};

pub fn run(data: &Path, ckpt: &Path, out: &Path, bins: usize, diameter_threshold: f64) -> CliResult {
    if bins == 0 {
        return Err(CliError::Usage("--bins must be at least 1".into()));
    }
    let (model, reg) = restore_model(ckpt).map_err(CliError::Run)?;
    let samples = load_dataset(data).map_err(CliError::Run)?;
    for s in &samples {
        let (h, w) = s.size();
        if h != model.input_size || w != model.input_size {
            return Err(CliError::Run(udet_core::UdetError::Data(format!(
                "sample {} is {h}x{w}, checkpoint expects {size}x{size}",
                s.meta.id,
                size = model.input_size
            ))));
        }
    }
    ensure_out_dir(out)?;

    let report =
        evaluate_dataset(&model, &reg, &samples, bins, diameter_threshold).map_err(CliError::Run)?;
    let io = |e: std::io::Error| CliError::Run(udet_core::UdetError::Io(e));
    std::fs::write(out.join("per_sample.csv"), report.per_sample_csv()).map_err(io)?;
    std::fs::write(out.join("aggregate.csv"), report.aggregate_csv()).map_err(io)?;
    std::fs::write(out.join("histogram.csv"), report.histogram_csv()).map_err(io)?;
    std::fs::write(out.join("stratified.csv"), report.stratified_csv()).map_err(io)?;
    stamp::write_stamp(out, "eval", 0, &format!("ckpt={} bins={bins}", ckpt.display()))
        .map_err(CliError::Run)?;

    println!(
        "evaluated {} samples: dsc={} sen={} ppv={} ({} undefined excluded)",
        report.evals.len(),
        report.aggregate.dsc.csv_cell(),
        report.aggregate.sen.csv_cell(),
        report.aggregate.ppv.csv_cell(),
        report.aggregate.undefined_excluded
    );
    Ok(())
}
