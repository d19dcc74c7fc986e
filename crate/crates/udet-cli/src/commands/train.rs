//! `udet train`: single-split training or k-fold cross-validation.

use std::fmt::Write as _;
use std::path::Path;

use udet_core::checkpoint::{save_checkpoint, CheckpointMeta};
use udet_core::data::{load_dataset, split_dataset, Sample};
use udet_core::metrics::METRICS_CSV_HEADER;
use udet_core::model::UdetModel;
use udet_core::train::{cross_validate, train_fold, MetricsRow, TrainConfig};

use crate::commands::ensure_out_dir;
use crate::{stamp, CliError, CliResult};

fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub fn run(data: &Path, config: &Path, out: &Path, folds: Option<usize>) -> CliResult {
    let config_text = std::fs::read_to_string(config)
        .map_err(|e| CliError::Run(udet_core::UdetError::Io(e)))?;
    let cfg = TrainConfig::parse(&config_text).map_err(CliError::Run)?;
    let samples: Vec<Sample> = load_dataset(data).map_err(CliError::Run)?;
    ensure_out_dir(out)?;
    std::fs::write(out.join("config.txt"), cfg.to_text())
        .map_err(|e| CliError::Run(udet_core::UdetError::Io(e)))?;

    match folds {
        Some(k) if k >= 2 => {
            let outcome = cross_validate(&samples, &cfg, k).map_err(CliError::Run)?;
            let mut all_rows = Vec::new();
            for (f, fold) in outcome.folds.iter().enumerate() {
                all_rows.extend(fold.history.iter().cloned());
                let meta = CheckpointMeta {
                    variant: cfg.variant,
                    input_size: cfg.input_size,
                    width_scale: cfg.width_scale,
                };
                // restore this fold's best weights into a fresh registry for saving
                let (_, mut reg) =
                    UdetModel::build::<f32>(cfg.variant, cfg.input_size, cfg.width_scale)
                        .map_err(CliError::Run)?;
                fold.best.restore(&mut reg).map_err(CliError::Run)?;
                save_checkpoint(&out.join(format!("fold{f}.ckpt")), &meta, &reg)
                    .map_err(CliError::Run)?;
            }
            std::fs::write(out.join("metrics.csv"), metrics_csv(&all_rows))
                .map_err(|e| CliError::Run(udet_core::UdetError::Io(e)))?;

            let mut summary = String::new();
            let (dm, ds) = outcome.dsc_mean_std;
            let (sm, ss) = outcome.sen_mean_std;
            let (pm, ps) = outcome.ppv_mean_std;
            let _ = writeln!(summary, "folds = {k}");
            let _ = writeln!(summary, "dsc = {dm:.4} +/- {ds:.4}");
            let _ = writeln!(summary, "sen = {sm:.4} +/- {ss:.4}");
            let _ = writeln!(summary, "ppv = {pm:.4} +/- {ps:.4}");
            std::fs::write(out.join("summary.txt"), &summary)
                .map_err(|e| CliError::Run(udet_core::UdetError::Io(e)))?;
            print!("{summary}");
        }
        Some(k) => {
            return Err(CliError::Usage(format!("--folds {k} must be at least 2")));
        }
        None => {
            let plan = split_dataset(samples.len(), cfg.val_fraction, 2, cfg.seed)
                .map_err(CliError::Run)?;
            let train: Vec<Sample> = plan.train.iter().map(|&i| samples[i].clone()).collect();
            let val: Vec<Sample> = plan.test.iter().map(|&i| samples[i].clone()).collect();
            let (model, mut reg) =
                UdetModel::build::<f32>(cfg.variant, cfg.input_size, cfg.width_scale)
                    .map_err(CliError::Run)?;
            let outcome =
                train_fold(&model, &mut reg, &train, &val, &cfg, 0).map_err(CliError::Run)?;
            let meta = CheckpointMeta {
                variant: cfg.variant,
                input_size: cfg.input_size,
                width_scale: cfg.width_scale,
            };
            save_checkpoint(&out.join("best.ckpt"), &meta, &reg).map_err(CliError::Run)?;
            std::fs::write(out.join("metrics.csv"), metrics_csv(&outcome.history))
                .map_err(|e| CliError::Run(udet_core::UdetError::Io(e)))?;
            println!(
                "trained {} epochs (best epoch {}, val loss {:.6}, class weight {:.2})",
                outcome.epochs_run, outcome.best_epoch, outcome.best_val_loss, outcome.class_weight
            );
        }
    }

    stamp::write_stamp(out, "train", cfg.seed, &cfg.to_text()).map_err(CliError::Run)?;
    Ok(())
}
