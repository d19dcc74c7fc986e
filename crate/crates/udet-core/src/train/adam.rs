//! Bias-corrected Adam with a step-wise decayed learning rate
//! `lr_t = lr0 / (1 + decay * t)`.

use crate::error::{Result, UdetError};
use crate::params::{ParamId, ParamRegistry};

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub decay: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn from_config(cfg: &super::TrainConfig) -> Self {
        AdamHyper { beta1: cfg.beta1, beta2: cfg.beta2, decay: cfg.decay, eps: cfg.adam_eps }
    }
}

pub struct AdamState {
    ids: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    base_lr: f64,
}

/// Decayed step size at step `t` (1-based).
pub fn decayed_lr(base_lr: f64, decay: f64, t: u64) -> f64 {
    base_lr / (1.0 + decay * t as f64)
}

impl AdamState {
    pub fn new(reg: &ParamRegistry<f32>, lr0: f64) -> Self {
        let ids = reg.trainable_ids();
        let m = ids.iter().map(|&id| vec![0.0; reg.value(id).numel()]).collect();
        let v = ids.iter().map(|&id| vec![0.0; reg.value(id).numel()]).collect();
        AdamState { ids, m, v, t: 0, base_lr: lr0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn base_lr(&self) -> f64 {
        self.base_lr
    }

    /// Plateau reduction hook.
    pub fn scale_lr(&mut self, factor: f64) {
        self.base_lr *= factor;
    }

    /// One update from the gradients currently held in the registry.
    pub fn step(&mut self, reg: &mut ParamRegistry<f32>, hyper: &AdamHyper) -> Result<()> {
        self.t += 1;
        let lr_t = decayed_lr(self.base_lr, hyper.decay, self.t);
        let bc1 = 1.0 - hyper.beta1.powi(self.t as i32);
        let bc2 = 1.0 - hyper.beta2.powi(self.t as i32);

        for (i, &id) in self.ids.iter().enumerate() {
            for e in 0..self.m[i].len() {
                let g = reg.grad(id)[e] as f64;
                if !g.is_finite() {
                    return Err(UdetError::Numerical(format!(
                        "non-finite gradient in {} at element {e}",
                        reg.slot(id).name
                    )));
                }
                let m = hyper.beta1 * self.m[i][e] + (1.0 - hyper.beta1) * g;
                let v = hyper.beta2 * self.v[i][e] + (1.0 - hyper.beta2) * g * g;
                self.m[i][e] = m;
                self.v[i][e] = v;
                let update = lr_t * (m / bc1) / ((v / bc2).sqrt() + hyper.eps);
                let p = &mut reg.value_mut(id).data_mut()[e];
                *p = (*p as f64 - update) as f32;
            }
        }
        Ok(())
    }
}
