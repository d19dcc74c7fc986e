//! `udet` command line: dataset synthesis, training, evaluation, prediction
//! with mask/overlay export, gradient checking, and the parameter audit.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 check failure.

mod commands;
mod overlay;
mod stamp;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand};
use udet_core::UdetError;

#[derive(Parser)]
#[command(name = "udet", version, about = "Lung-nodule segmentation engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic phantom slices with exact ground-truth masks
    Synth {
        /// Output directory for volumes and the manifest
        #[arg(long)]
        out: PathBuf,
        /// Number of samples to generate (must be positive)
        #[arg(long)]
        count: usize,
        /// Square image size in pixels (multiple of 16)
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Nodules per sample
        #[arg(long, default_value_t = 2)]
        nodules: usize,
        #[arg(long, default_value_t = 4.0)]
        radius_min: f64,
        #[arg(long, default_value_t = 9.0)]
        radius_max: f64,
        /// Fraction of samples whose first nodule attaches to the lung wall
        #[arg(long, default_value_t = 0.25)]
        attach_fraction: f64,
    },
    /// Train on a dataset directory (single split, or k-fold cross-validation)
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Flat key = value training configuration
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run k-fold cross-validation instead of a single split
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Evaluate a checkpoint: per-sample metrics, aggregate, histogram, strata
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Diameter stratification threshold in millimeters
        #[arg(long, default_value_t = 6.0)]
        diameter_threshold: f64,
    },
    /// Predict a mask for one stored slice; writes the mask volume and an
    /// overlay image
    Predict {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional ground-truth mask to draw alongside the prediction
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Run the full gradient-verification suite
    Gradcheck,
    /// Print the parameter audit; the standard variant is diffed against the
    /// published table
    Params {
        #[arg(long, default_value = "udet")]
        variant: String,
    },
}

/// Command failures with their process exit codes.
pub enum CliError {
    Usage(String),
    Run(UdetError),
    Check(String),
}

impl From<UdetError> for CliError {
    fn from(e: UdetError) -> Self {
        match e {
            UdetError::CheckFailed(msg) => CliError::Check(msg),
            other => CliError::Run(other),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Run(_) => 2,
            CliError::Check(_) => 3,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => format!("usage error: {m}"),
            CliError::Run(e) => format!("error: {e}"),
            CliError::Check(m) => format!("check failed: {m}"),
        }
    }
}

pub type CliResult = Result<(), CliError>;

fn run(cli: Cli) -> CliResult {
    match cli.cmd {
        Command::Synth { out, count, size, seed, nodules, radius_min, radius_max, attach_fraction } => {
            commands::synth::run(
                &out,
                count,
                size,
                seed,
                nodules,
                (radius_min, radius_max),
                attach_fraction,
            )
        }
        Command::Train { data, config, out, folds } => {
            commands::train::run(&data, &config, &out, folds)
        }
        Command::Eval { data, ckpt, out, bins, diameter_threshold } => {
            commands::eval::run(&data, &ckpt, &out, bins, diameter_threshold)
        }
        Command::Predict { image, ckpt, out, mask } => {
            commands::predict::run(&image, &ckpt, &out, mask.as_deref())
        }
        Command::Gradcheck => commands::gradcheck::run(),
        Command::Params { variant } => commands::params::run(&variant),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
