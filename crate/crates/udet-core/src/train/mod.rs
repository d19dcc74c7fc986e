//! Optimization: Adam with step-decayed learning rate, early stopping,
//! plateau-based learning-rate reduction, and k-fold cross-validation.

pub mod adam;
pub mod config;
mod engine;
mod init;

pub use adam::{AdamHyper, AdamState};
pub use config::{ClassWeightSource, TrainConfig};
pub use engine::{
    cross_validate, evaluate_samples, summarize, train_fold, CrossValOutcome, EpochDecision,
    FoldOutcome, MetricsRow, SampleEval, Split, StopState, Summary,
};
pub use init::init_weights;
