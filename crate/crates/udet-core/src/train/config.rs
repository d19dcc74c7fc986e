//! Training hyperparameters and their flat key = value file format.

use crate::data::augment::AugmentSpec;
use crate::error::{Result, UdetError};
use crate::model::{VariantSpec, WidthScale};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClassWeightSource {
    /// Negative-to-positive voxel ratio of the training masks.
    Auto,
    Fixed(f64),
}

impl std::fmt::Display for ClassWeightSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClassWeightSource::Auto => write!(f, "auto"),
            ClassWeightSource::Fixed(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub decay: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub class_weight: ClassWeightSource,
    pub variant: VariantSpec,
    pub input_size: usize,
    pub width_scale: WidthScale,
    pub augment: AugmentSpec,
    /// Optional early exit once the train-set DSC reaches this value
    /// (desk-scale overfit experiments).
    pub stop_at_train_dsc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            beta1: 0.99,
            beta2: 0.999,
            decay: 1e-6,
            adam_eps: 1e-8,
            batch_size: 2,
            early_stop_patience: 10,
            plateau_factor: 0.5,
            plateau_patience: 5,
            max_epochs: 200,
            seed: 42,
            val_fraction: 0.25,
            class_weight: ClassWeightSource::Auto,
            variant: VariantSpec::udet(),
            input_size: 128,
            width_scale: WidthScale::Quarter,
            augment: AugmentSpec::standard(),
            stop_at_train_dsc: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(UdetError::InvalidArgument(format!("lr0 {} must be > 0", self.lr0)));
        }
        if !(0.0 < self.beta1 && self.beta1 < self.beta2 && self.beta2 < 1.0) {
            return Err(UdetError::InvalidArgument(format!(
                "betas must satisfy 0 < beta1 < beta2 < 1, got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if self.early_stop_patience < 1 || self.plateau_patience < 1 {
            return Err(UdetError::InvalidArgument("patiences must be >= 1".into()));
        }
        if self.batch_size < 1 || self.max_epochs < 1 {
            return Err(UdetError::InvalidArgument("batch size and epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(UdetError::InvalidArgument(format!(
                "val fraction {}",
                self.val_fraction
            )));
        }
        if let ClassWeightSource::Fixed(v) = self.class_weight {
            if v <= 0.0 {
                return Err(UdetError::InvalidArgument(format!("class weight {v} must be > 0")));
            }
        }
        if let Some(d) = self.stop_at_train_dsc {
            if !(0.0..=1.0).contains(&d) {
                return Err(UdetError::InvalidArgument(format!("stop_at_train_dsc {d}")));
            }
        }
        self.augment.validate()
    }

    /// Canonical key = value form (what `parse` accepts).
    pub fn to_text(&self) -> String {
        let aug = if self.augment == AugmentSpec::none() { "none" } else { "standard" };
        format!(
            "lr0 = {}\nbeta1 = {}\nbeta2 = {}\ndecay = {}\nadam_eps = {}\n\
             batch_size = {}\nearly_stop_patience = {}\nplateau_factor = {}\n\
             plateau_patience = {}\nmax_epochs = {}\nseed = {}\nval_fraction = {}\n\
             class_weight = {}\nvariant = {}\ninput_size = {}\nwidth_scale = {}\naugment = {}\n",
            self.lr0,
            self.beta1,
            self.beta2,
            self.decay,
            self.adam_eps,
            self.batch_size,
            self.early_stop_patience,
            self.plateau_factor,
            self.plateau_patience,
            self.max_epochs,
            self.seed,
            self.val_fraction,
            self.class_weight,
            self.variant.name(),
            self.input_size,
            self.width_scale,
            aug
        )
    }

    /// Parse the flat format; unknown keys are rejected, missing keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                UdetError::Data(format!("config line {}: expected key = value", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            let bad =
                |what: &str| UdetError::Data(format!("config line {}: bad {what} {v:?}", lineno + 1));
            match k {
                "lr0" => cfg.lr0 = v.parse().map_err(|_| bad("lr0"))?,
                "beta1" => cfg.beta1 = v.parse().map_err(|_| bad("beta1"))?,
                "beta2" => cfg.beta2 = v.parse().map_err(|_| bad("beta2"))?,
                "decay" => cfg.decay = v.parse().map_err(|_| bad("decay"))?,
                "adam_eps" => cfg.adam_eps = v.parse().map_err(|_| bad("adam_eps"))?,
                "batch_size" => cfg.batch_size = v.parse().map_err(|_| bad("batch_size"))?,
                "early_stop_patience" => {
                    cfg.early_stop_patience = v.parse().map_err(|_| bad("patience"))?
                }
                "plateau_factor" => cfg.plateau_factor = v.parse().map_err(|_| bad("factor"))?,
                "plateau_patience" => {
                    cfg.plateau_patience = v.parse().map_err(|_| bad("patience"))?
                }
                "max_epochs" => cfg.max_epochs = v.parse().map_err(|_| bad("max_epochs"))?,
                "seed" => cfg.seed = v.parse().map_err(|_| bad("seed"))?,
                "val_fraction" => cfg.val_fraction = v.parse().map_err(|_| bad("val_fraction"))?,
                "class_weight" => {
                    cfg.class_weight = if v == "auto" {
                        ClassWeightSource::Auto
                    } else {
                        ClassWeightSource::Fixed(v.parse().map_err(|_| bad("class_weight"))?)
                    }
                }
                "variant" => cfg.variant = v.parse()?,
                "input_size" => cfg.input_size = v.parse().map_err(|_| bad("input_size"))?,
                "width_scale" => cfg.width_scale = v.parse()?,
                "stop_at_train_dsc" => {
                    cfg.stop_at_train_dsc = if v == "none" {
                        None
                    } else {
                        Some(v.parse().map_err(|_| bad("stop_at_train_dsc"))?)
                    }
                }
                "augment" => {
                    cfg.augment = match v {
                        "none" => AugmentSpec::none(),
                        "standard" => AugmentSpec::standard(),
                        other => {
                            return Err(UdetError::Data(format!(
                                "config line {}: augment must be none or standard, got {other:?}",
                                lineno + 1
                            )))
                        }
                    }
                }
                other => {
                    return Err(UdetError::Data(format!(
                        "config line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<TrainConfig> {
        TrainConfig::parse(&std::fs::read_to_string(path)?)
    }
}
