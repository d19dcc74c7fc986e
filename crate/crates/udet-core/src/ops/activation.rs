//! Elementwise activations and their derivatives.
//!
//! Softplus and sigmoid use overflow-safe algebraic forms so that the literal
//! ln(1 + e^x) never overflows at moderate magnitudes.

use crate::error::{Result, UdetError};
use crate::scalar::Scalar;
use crate::tape::{Rule, Tape, VarId};
use crate::tensor::Tensor4;

use super::ActivationKind;

/// softplus(x) = ln(1 + e^x), computed as max(x, 0) + ln1p(e^-|x|).
#[inline]
pub fn softplus_scalar<E: Scalar>(x: E) -> E {
    x.max(E::zero()) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid_scalar<E: Scalar>(x: E) -> E {
    if x >= E::zero() {
        E::one() / (E::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::one() + e)
    }
}

/// mish(x) = x * tanh(softplus(x)).
#[inline]
pub fn mish_scalar<E: Scalar>(x: E) -> E {
    x * softplus_scalar(x).tanh()
}

/// d/dx mish(x) = tanh(sp(x)) + x * (1 - tanh^2(sp(x))) * sigmoid(x).
#[inline]
pub fn mish_scalar_grad<E: Scalar>(x: E) -> E {
    let t = softplus_scalar(x).tanh();
    t + x * (E::one() - t * t) * sigmoid_scalar(x)
}

#[inline]
fn apply_scalar<E: Scalar>(kind: ActivationKind, x: E) -> E {
    match kind {
        ActivationKind::Mish => mish_scalar(x),
        ActivationKind::Relu => x.max(E::zero()),
        ActivationKind::Sigmoid => sigmoid_scalar(x),
        ActivationKind::Softplus => softplus_scalar(x),
        ActivationKind::Identity => x,
    }
}

pub(crate) fn activation_forward<E: Scalar>(kind: ActivationKind, x: &Tensor4<E>) -> Tensor4<E> {
    let mut out = x.clone();
    out.requires_grad = false;
    out.grad = None;
    for v in out.data_mut() {
        *v = apply_scalar(kind, *v);
    }
    out
}

/// grad_in += grad_out * kind'(x); `ys` is the forward output (reused for
/// sigmoid, whose derivative is y(1-y)).
pub(crate) fn activation_backward<E: Scalar>(
    kind: ActivationKind,
    xs: &[E],
    ys: &[E],
    gy: &[E],
    gx: &mut [E],
) {
    match kind {
        ActivationKind::Mish => {
            for ((g, &x), &d) in gx.iter_mut().zip(xs).zip(gy) {
                *g = *g + d * mish_scalar_grad(x);
            }
        }
        ActivationKind::Relu => {
            for ((g, &x), &d) in gx.iter_mut().zip(xs).zip(gy) {
                if x > E::zero() {
                    *g = *g + d;
                }
            }
        }
        ActivationKind::Sigmoid => {
            for ((g, &y), &d) in gx.iter_mut().zip(ys).zip(gy) {
                *g = *g + d * y * (E::one() - y);
            }
        }
        ActivationKind::Softplus => {
            for ((g, &x), &d) in gx.iter_mut().zip(xs).zip(gy) {
                *g = *g + d * sigmoid_scalar(x);
            }
        }
        ActivationKind::Identity => {
            for (g, &d) in gx.iter_mut().zip(gy) {
                *g = *g + d;
            }
        }
    }
}

impl<E: Scalar> Tape<E> {
    pub fn activation(&mut self, x: VarId, kind: ActivationKind) -> Result<VarId> {
        self.check_owned(x, "activation")?;
        let req = self.var_requires_grad(x);
        let out = activation_forward(kind, self.value(x));
        Ok(self.record(out, req, || Rule::Activation { x: x.idx, kind }))
    }

    pub fn mish(&mut self, x: VarId) -> Result<VarId> {
        self.activation(x, ActivationKind::Mish)
    }

    pub fn relu(&mut self, x: VarId) -> Result<VarId> {
        self.activation(x, ActivationKind::Relu)
    }

    pub fn sigmoid(&mut self, x: VarId) -> Result<VarId> {
        self.activation(x, ActivationKind::Sigmoid)
    }

    pub fn softplus(&mut self, x: VarId) -> Result<VarId> {
        self.activation(x, ActivationKind::Softplus)
    }
}

impl std::str::FromStr for ActivationKind {
    type Err = UdetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mish" => Ok(ActivationKind::Mish),
            "relu" => Ok(ActivationKind::Relu),
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "softplus" => Ok(ActivationKind::Softplus),
            "identity" => Ok(ActivationKind::Identity),
            other => Err(UdetError::InvalidArgument(format!("unknown activation {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mish_fixed_points() {
        assert_eq!(mish_scalar(0.0f64), 0.0);
        assert!((mish_scalar(1.0f64) - 0.865098).abs() < 1e-6);
        assert!((mish_scalar_grad(0.0f64) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn mish_finite_at_extremes() {
        for &x in &[-1e4f64, -50.0, 50.0, 1e4] {
            assert!(mish_scalar(x).is_finite(), "mish({x}) not finite");
        }
        // Deeply negative inputs decay to 0, positive track x.
        assert!(mish_scalar(-1e4f64).abs() < 1e-300);
        assert!((mish_scalar(1e4f64) - 1e4).abs() < 1e-6);
    }

    #[test]
    fn mish_bounds_on_dense_grid() {
        // mish(x) <= x for x >= 0, and bounded below by the global minimum.
        let mut x = -20.0f64;
        while x <= 20.0 {
            let y = mish_scalar(x);
            if x >= 0.0 {
                assert!(y <= x + 1e-15);
            }
            assert!(y > -0.30885, "mish({x}) = {y} below bound");
            x += 1e-3;
        }
    }

    #[test]
    fn softplus_asymptote() {
        assert!((softplus_scalar(20.0f64) - 20.0) < 1e-8);
        assert!((softplus_scalar(20.0f64) - 20.0) > 0.0);
    }

    #[test]
    fn sigmoid_and_relu_points() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        assert!(sigmoid_scalar(1e4f64).is_finite());
        assert!(sigmoid_scalar(-1e4f64).is_finite());
        assert_eq!(apply_scalar(ActivationKind::Relu, -3.0f32), 0.0);
        assert_eq!(apply_scalar(ActivationKind::Relu, 3.0f32), 3.0);
    }
}
