//! Central-difference gradient verification at 64-bit precision.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, UdetError};
use crate::params::{ParamId, ParamRegistry};
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor4;

/// Per-element finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct CheckFailure {
    /// Index of the input (or parameter) the element belongs to.
    pub input_index: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug)]
pub struct CheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub failures: Vec<CheckFailure>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.max_rel_err <= self.tolerance
    }
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.passed() {
            write!(
                f,
                "pass: {} elements, max rel err {:.3e} (tol {:.1e})",
                self.checked, self.max_rel_err, self.tolerance
            )
        } else {
            let worst = self
                .failures
                .iter()
                .max_by(|a, b| a.rel_err.partial_cmp(&b.rel_err).unwrap_or(std::cmp::Ordering::Equal));
            match worst {
                Some(w) => write!(
                    f,
                    "FAIL: {}/{} elements over tol {:.1e}; worst input {} element {}: analytic {:.6e} vs numeric {:.6e} (rel {:.3e})",
                    self.failures.len(), self.checked, self.tolerance,
                    w.input_index, w.element, w.analytic, w.numeric, w.rel_err
                ),
                None => write!(f, "FAIL: max rel err {:.3e} over tol {:.1e}", self.max_rel_err, self.tolerance),
            }
        }
    }
}

/// analytic-vs-numeric agreement; denominators below 1 are floored so that
/// finite-difference noise on true-zero gradients does not flag.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

fn sample_indices(n: usize, want: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match want {
        Some(k) if k < n => rand::seq::index::sample(rng, n, k).into_vec(),
        _ => (0..n).collect(),
    }
}

/// Check the gradient of a scalar-valued graph with respect to its leaf
/// inputs. `build` constructs the graph from leaves and returns the scalar
/// loss. Inputs are checked exhaustively unless `samples_per_input` caps the
/// element count per input.
pub fn check_op_gradients<F>(
    build: &F,
    inputs: &[Tensor4<f64>],
    tolerance: f64,
    step: f64,
    samples_per_input: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<CheckReport>
where
    F: Fn(&mut Tape<f64>, &[VarId]) -> Result<VarId>,
{
    let eval = |tensors: &[Tensor4<f64>]| -> Result<f64> {
        let mut tape = Tape::inference();
        let vars: Vec<VarId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        if tape.value(loss).numel() != 1 {
            return Err(UdetError::shape("grad_check", "loss must be scalar"));
        }
        Ok(tape.value(loss).data()[0])
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<VarId> = inputs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.requires_grad = true;
            tape.leaf(t)
        })
        .collect();
    let loss = build(&mut tape, &vars)?;
    if tape.value(loss).numel() != 1 {
        return Err(UdetError::shape("grad_check", "loss must be scalar"));
    }
    let mut reg = ParamRegistry::new();
    tape.backward(loss, &mut reg)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| tape.grad(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut work: Vec<Tensor4<f64>> = inputs.to_vec();
    let mut report =
        CheckReport { max_rel_err: 0.0, checked: 0, tolerance, failures: Vec::new() };

    for (i, input) in inputs.iter().enumerate() {
        for e in sample_indices(input.numel(), samples_per_input, rng) {
            let orig = work[i].data()[e];
            work[i].data_mut()[e] = orig + step;
            let f_plus = eval(&work)?;
            work[i].data_mut()[e] = orig - step;
            let f_minus = eval(&work)?;
            work[i].data_mut()[e] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * step);
            let a = analytic[i][e];
            report.checked += 1;
            if !numeric.is_finite() || !a.is_finite() {
                report.failures.push(CheckFailure {
                    input_index: i,
                    element: e,
                    analytic: a,
                    numeric,
                    rel_err: f64::INFINITY,
                });
                report.max_rel_err = f64::INFINITY;
                continue;
            }
            let r = rel_err(a, numeric);
            report.max_rel_err = report.max_rel_err.max(r);
            if r > tolerance {
                report.failures.push(CheckFailure {
                    input_index: i,
                    element: e,
                    analytic: a,
                    numeric,
                    rel_err: r,
                });
            }
        }
    }
    Ok(report)
}

/// Check registry parameter gradients against central differences of a
/// forward-only loss. `reg` must already hold the analytic gradients
/// (one zeroed-then-backward pass). Samples `samples_per_param` elements of
/// every trainable parameter.
pub fn check_param_gradients<F>(
    reg: &mut ParamRegistry<f64>,
    loss_fn: &mut F,
    tolerance: f64,
    step: f64,
    samples_per_param: usize,
    rng: &mut ChaCha8Rng,
) -> Result<CheckReport>
where
    F: FnMut(&ParamRegistry<f64>) -> Result<f64>,
{
    let ids: Vec<ParamId> = reg.trainable_ids();
    let mut report =
        CheckReport { max_rel_err: 0.0, checked: 0, tolerance, failures: Vec::new() };

    for id in ids {
        let n = reg.value(id).numel();
        for e in sample_indices(n, Some(samples_per_param), rng) {
            let orig = reg.value(id).data()[e];
            reg.value_mut(id).data_mut()[e] = orig + step;
            let f_plus = loss_fn(reg)?;
            reg.value_mut(id).data_mut()[e] = orig - step;
            let f_minus = loss_fn(reg)?;
            reg.value_mut(id).data_mut()[e] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * step);
            let a = reg.grad(id)[e];
            report.checked += 1;
            if !numeric.is_finite() || !a.is_finite() {
                report.failures.push(CheckFailure {
                    input_index: id.index(),
                    element: e,
                    analytic: a,
                    numeric,
                    rel_err: f64::INFINITY,
                });
                report.max_rel_err = f64::INFINITY;
                continue;
            }
            let r = rel_err(a, numeric);
            report.max_rel_err = report.max_rel_err.max(r);
            if r > tolerance {
                report.failures.push(CheckFailure {
                    input_index: id.index(),
                    element: e,
                    analytic: a,
                    numeric,
                    rel_err: r,
                });
            }
        }
    }
    Ok(report)
}

/// Uniform random tensor in [-1, 1), reproducible from the rng.
pub fn random_tensor(shape: crate::tensor::Shape4, rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    use rand::Rng;
    Tensor4::from_fn(shape, |_| rng.random::<f64>() * 2.0 - 1.0)
}

/// Convenience rng for checks.
pub fn check_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    fn identity_has_exactly_zero_error() {
        // dyadic values with a dyadic step make the central difference exact
        let build = |t: &mut Tape<f64>, vs: &[VarId]| t.sum(vs[0]);
        let mut rng = check_rng(1);
        let x = Tensor4::from_fn(Shape4::new(1, 2, 3, 3), |i| i as f64 / 1024.0);
        let report =
            check_op_gradients(&build, &[x], 1e-12, 2f64.powi(-17), None, &mut rng).unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn product_gradients_verify() {
        let build = |t: &mut Tape<f64>, vs: &[VarId]| {
            let m = t.mul(vs[0], vs[1])?;
            t.sum(m)
        };
        let mut rng = check_rng(2);
        let a = random_tensor(Shape4::new(1, 1, 4, 4), &mut rng);
        let b = random_tensor(Shape4::new(1, 1, 4, 4), &mut rng);
        let report =
            check_op_gradients(&build, &[a, b], 1e-6, DEFAULT_STEP, None, &mut rng).unwrap();
        assert!(report.passed(), "{report}");
    }
}
