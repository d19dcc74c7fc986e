//! Batch normalization over (batch, height, width) per channel.

use crate::error::{Result, UdetError};
use crate::params::{ParamId, ParamRegistry};
use crate::scalar::Scalar;
use crate::tape::{BnUpdate, Rule, Tape, VarId};
use crate::tensor::{Shape4, Tensor4};

use super::Mode;

/// Per-layer batch-norm description. Learned scale and shift plus running
/// mean/variance give 4*channels counted parameters.
#[derive(Clone, Debug)]
pub struct BatchNormSpec {
    pub channels: usize,
    pub epsilon: f64,
    pub momentum: f64,
}

impl BatchNormSpec {
    pub fn new(channels: usize) -> Self {
        BatchNormSpec { channels, epsilon: 1e-3, momentum: 0.99 }
    }

    pub fn param_count(&self) -> usize {
        4 * self.channels
    }
}

/// Fold pending batch statistics into the registry's running buffers:
/// `running = momentum * running + (1 - momentum) * batch`.
pub fn apply_bn_updates<E: Scalar>(reg: &mut ParamRegistry<E>, updates: Vec<BnUpdate<E>>) {
    for u in updates {
        apply_one_update(reg, &u, u.momentum);
    }
}

fn apply_one_update<E: Scalar>(reg: &mut ParamRegistry<E>, u: &BnUpdate<E>, m: E) {
    let one_m = E::one() - m;
    {
        let rm = reg.value_mut(u.mean_id);
        for (r, &b) in rm.data_mut().iter_mut().zip(&u.batch_mean) {
            *r = m * *r + one_m * b;
        }
    }
    let rv = reg.value_mut(u.var_id);
    for (r, &b) in rv.data_mut().iter_mut().zip(&u.batch_var) {
        *r = m * *r + one_m * b;
    }
}

/// Running-statistics updater with a cumulative-average warm-up: the n-th
/// update of a layer uses momentum `min(declared, n/(n+1))`, so the first
/// batch replaces the placeholder statistics outright and the declared
/// momentum takes over once enough batches have been seen. Few-step desk
/// runs would otherwise spend hundreds of updates escaping the (0, 1)
/// initialization.
#[derive(Default)]
pub struct BnStatTracker {
    seen: std::collections::HashMap<crate::params::ParamId, u64>,
}

impl BnStatTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply<E: Scalar>(&mut self, reg: &mut ParamRegistry<E>, updates: Vec<BnUpdate<E>>) {
        for u in updates {
            let n = self.seen.entry(u.mean_id).or_insert(0);
            let cumulative = E::of(*n as f64 / (*n as f64 + 1.0));
            let m = if cumulative < u.momentum { cumulative } else { u.momentum };
            *n += 1;
            apply_one_update(reg, &u, m);
        }
    }
}

/// Replace every running statistic with the plain average of the batch
/// statistics produced by the given train-mode forward passes. Used to
/// re-estimate statistics from the final weights before evaluation, where
/// the momentum-weighted history lags far behind on short runs.
pub fn recalibrate_bn<E: Scalar>(
    reg: &mut ParamRegistry<E>,
    collected: Vec<Vec<BnUpdate<E>>>,
) -> Result<()> {
    let passes = collected.len();
    if passes == 0 {
        return Err(UdetError::InvalidArgument("recalibration needs at least one pass".into()));
    }
    let mut acc: std::collections::HashMap<crate::params::ParamId, (crate::params::ParamId, Vec<E>, Vec<E>, usize)> =
        std::collections::HashMap::new();
    for pass in collected {
        for u in pass {
            let entry = acc.entry(u.mean_id).or_insert_with(|| {
                (u.var_id, vec![E::zero(); u.batch_mean.len()], vec![E::zero(); u.batch_var.len()], 0)
            });
            for (a, &b) in entry.1.iter_mut().zip(&u.batch_mean) {
                *a = *a + b;
            }
            for (a, &b) in entry.2.iter_mut().zip(&u.batch_var) {
                *a = *a + b;
            }
            entry.3 += 1;
        }
    }
    for (mean_id, (var_id, mean_sum, var_sum, n)) in acc {
        let inv = E::one() / E::of(n as f64);
        let rm = reg.value_mut(mean_id);
        for (r, &s) in rm.data_mut().iter_mut().zip(&mean_sum) {
            *r = s * inv;
        }
        let rv = reg.value_mut(var_id);
        for (r, &s) in rv.data_mut().iter_mut().zip(&var_sum) {
            *r = s * inv;
        }
    }
    Ok(())
}

fn normalize<E: Scalar>(
    x: &Tensor4<E>,
    gamma: &[E],
    beta: &[E],
    mean: &[E],
    inv_std: &[E],
) -> Tensor4<E> {
    let s = x.shape();
    let plane = s.plane();
    let mut out = vec![E::zero(); s.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let (g, b, mu, is) = (gamma[c], beta[c], mean[c], inv_std[c]);
            for i in 0..plane {
                out[base + i] = g * (x.data()[base + i] - mu) * is + b;
            }
        }
    }
    Tensor4::new(s, out).expect("batchnorm output shape")
}

/// Train-mode backward follows the full batch-statistics chain rule; in
/// infer mode the saved statistics are constants.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_backward<E: Scalar>(
    x: &Tensor4<E>,
    gamma: &[E],
    mean: &[E],
    inv_std: &[E],
    train: bool,
    gy: &[E],
    dx_idx: Option<u32>,
    dgamma_idx: Option<u32>,
    dbeta_idx: Option<u32>,
    grads: &mut [Option<Vec<E>>],
) {
    let s = x.shape();
    let plane = s.plane();
    let m_count = s.n * plane;
    let m_e = E::of(m_count as f64);

    // Per-channel reductions.
    let mut sum_gy = vec![E::zero(); s.c];
    let mut sum_gy_xhat = vec![E::zero(); s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let (mu, is) = (mean[c], inv_std[c]);
            let mut a = E::zero();
            let mut b = E::zero();
            for i in 0..plane {
                let d = gy[base + i];
                a = a + d;
                b = b + d * (x.data()[base + i] - mu) * is;
            }
            sum_gy[c] = sum_gy[c] + a;
            sum_gy_xhat[c] = sum_gy_xhat[c] + b;
        }
    }

    if let Some(idx) = dbeta_idx {
        let g = ensure(grads, idx, s.c);
        for (gi, &v) in g.iter_mut().zip(&sum_gy) {
            *gi = *gi + v;
        }
    }
    if let Some(idx) = dgamma_idx {
        let g = ensure(grads, idx, s.c);
        for (gi, &v) in g.iter_mut().zip(&sum_gy_xhat) {
            *gi = *gi + v;
        }
    }
    if let Some(idx) = dx_idx {
        let g = ensure(grads, idx, s.numel());
        for n in 0..s.n {
            for c in 0..s.c {
                let base = (n * s.c + c) * plane;
                let (mu, is, ga) = (mean[c], inv_std[c], gamma[c]);
                if train {
                    let k = ga * is / m_e;
                    for i in 0..plane {
                        let xhat = (x.data()[base + i] - mu) * is;
                        let d = m_e * gy[base + i] - sum_gy[c] - xhat * sum_gy_xhat[c];
                        g[base + i] = g[base + i] + k * d;
                    }
                } else {
                    let k = ga * is;
                    for i in 0..plane {
                        g[base + i] = g[base + i] + k * gy[base + i];
                    }
                }
            }
        }
    }
}

fn ensure<'a, E: Scalar>(grads: &'a mut [Option<Vec<E>>], idx: u32, numel: usize) -> &'a mut [E] {
    let slot = &mut grads[idx as usize];
    if slot.is_none() {
        *slot = Some(vec![E::zero(); numel]);
    }
    slot.as_mut().unwrap()
}

impl<E: Scalar> Tape<E> {
    /// Per-channel standardization. Train mode uses batch statistics and,
    /// when `update_ids` is given, queues a running-statistics update; infer
    /// mode depends only on the running statistics passed in.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        running_mean: &[E],
        running_var: &[E],
        spec: &BatchNormSpec,
        mode: Mode,
        update_ids: Option<(ParamId, ParamId)>,
    ) -> Result<VarId> {
        self.check_owned(x, "batchnorm2d")?;
        self.check_owned(gamma, "batchnorm2d")?;
        self.check_owned(beta, "batchnorm2d")?;
        let s = self.shape(x);
        if s.c != spec.channels {
            return Err(UdetError::shape(
                "batchnorm2d",
                format!("input has {} channels, spec expects {}", s.c, spec.channels),
            ));
        }
        let per_ch = Shape4::new(1, spec.channels, 1, 1);
        if self.shape(gamma) != per_ch || self.shape(beta) != per_ch {
            return Err(UdetError::shape("batchnorm2d", "gamma/beta must be (1,c,1,1)"));
        }
        if running_mean.len() != spec.channels || running_var.len() != spec.channels {
            return Err(UdetError::shape("batchnorm2d", "running stats length"));
        }
        let eps = E::of(spec.epsilon);

        let (mean, var, train) = if mode.uses_batch_stats() {
            {
                let m_count = s.n * s.plane();
                if m_count < 2 {
                    return Err(UdetError::InvalidArgument(
                        "batchnorm2d train mode needs batch*h*w >= 2".into(),
                    ));
                }
                let m_e = E::of(m_count as f64);
                let mut mean = vec![E::zero(); s.c];
                let mut var = vec![E::zero(); s.c];
                let xd = self.value(x).data();
                for n in 0..s.n {
                    for c in 0..s.c {
                        let base = (n * s.c + c) * s.plane();
                        let sum: E = xd[base..base + s.plane()].iter().copied().sum();
                        mean[c] = mean[c] + sum;
                    }
                }
                for c in 0..s.c {
                    mean[c] = mean[c] / m_e;
                }
                for n in 0..s.n {
                    for c in 0..s.c {
                        let base = (n * s.c + c) * s.plane();
                        let mu = mean[c];
                        let mut acc = E::zero();
                        for i in 0..s.plane() {
                            let d = xd[base + i] - mu;
                            acc = acc + d * d;
                        }
                        var[c] = var[c] + acc;
                    }
                }
                for c in 0..s.c {
                    var[c] = var[c] / m_e;
                }
                if let Some((mean_id, var_id)) = update_ids {
                    self.push_bn_update(BnUpdate {
                        mean_id,
                        var_id,
                        batch_mean: mean.clone(),
                        batch_var: var.clone(),
                        momentum: E::of(spec.momentum),
                    });
                }
                (mean, var, true)
            }
        } else {
            (running_mean.to_vec(), running_var.to_vec(), false)
        };

        let inv_std: Vec<E> = var.iter().map(|&v| E::one() / (v + eps).sqrt()).collect();
        let out = normalize(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            &mean,
            &inv_std,
        );
        let req = self.var_requires_grad(x)
            || self.var_requires_grad(gamma)
            || self.var_requires_grad(beta);
        Ok(self.record(out, req, || Rule::BatchNorm {
            x: x.idx,
            gamma: gamma.idx,
            beta: beta.idx,
            mean,
            inv_std,
            train,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn spec(c: usize) -> BatchNormSpec {
        BatchNormSpec::new(c)
    }

    fn ones_vec<E: Scalar>(c: usize) -> Tensor4<E> {
        Tensor4::full(Shape4::new(1, c, 1, 1), E::one())
    }

    fn zeros_vec<E: Scalar>(c: usize) -> Tensor4<E> {
        Tensor4::zeros(Shape4::new(1, c, 1, 1))
    }

    #[test]
    fn gamma_zero_outputs_beta() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor4::from_fn(Shape4::new(2, 2, 2, 2), |i| i as f64));
        let g = tape.leaf(zeros_vec(2));
        let b = tape.leaf(Tensor4::full(Shape4::new(1, 2, 1, 1), 3.5));
        let rm = vec![0.0; 2];
        let rv = vec![1.0; 2];
        let y = tape
            .batchnorm2d(x, g, b, &rm, &rv, &spec(2), Mode::Train, None)
            .unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn train_mode_standardizes_per_channel() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let s = Shape4::new(4, 3, 6, 6);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor4::from_fn(s, |_| rng.random::<f64>() * 5.0 - 1.0));
        let g = tape.leaf(ones_vec(3));
        let b = tape.leaf(zeros_vec(3));
        let y = tape
            .batchnorm2d(x, g, b, &[0.0; 3], &[1.0; 3], &spec(3), Mode::Train, None)
            .unwrap();
        let yd = tape.value(y);
        let m = (s.n * s.plane()) as f64;
        for c in 0..3 {
            let mut mean = 0.0;
            let mut var = 0.0;
            for n in 0..s.n {
                for i in 0..s.plane() {
                    let v = yd.data()[(n * s.c + c) * s.plane() + i];
                    mean += v;
                    var += v * v;
                }
            }
            mean /= m;
            var = var / m - mean * mean;
            assert!(mean.abs() < 1e-5, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {c} var {var}");
        }
    }

    #[test]
    fn already_standard_input_passes_through() {
        // exact zero-mean unit-variance pair per channel
        let s = Shape4::new(1, 2, 1, 2);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor4::new(s, vec![-1.0, 1.0, -1.0, 1.0]).unwrap());
        let g = tape.leaf(ones_vec(2));
        let b = tape.leaf(zeros_vec(2));
        let y = tape
            .batchnorm2d(x, g, b, &[0.0; 2], &[1.0; 2], &spec(2), Mode::Train, None)
            .unwrap();
        for (&yo, &xo) in tape.value(y).data().iter().zip(tape.value(x).data()) {
            assert!((yo - xo).abs() < 1e-3, "{yo} vs {xo}"); // epsilon shrinks slightly
        }
    }

    #[test]
    fn infer_mode_uses_running_stats_only() {
        let s = Shape4::new(2, 1, 2, 2);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor4::full(s, 10.0));
        let g = tape.leaf(ones_vec(1));
        let b = tape.leaf(zeros_vec(1));
        let y = tape
            .batchnorm2d(x, g, b, &[4.0], &[4.0 - 1e-3], &spec(1), Mode::Infer, None)
            .unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 3.0).abs() < 1e-9); // (10-4)/sqrt(4) = 3
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor4::zeros(Shape4::new(1, 3, 2, 2)));
        let g = tape.leaf(ones_vec(2));
        let b = tape.leaf(zeros_vec(2));
        assert!(tape
            .batchnorm2d(x, g, b, &[0.0; 2], &[1.0; 2], &spec(2), Mode::Infer, None)
            .is_err());
    }
}
