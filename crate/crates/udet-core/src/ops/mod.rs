//! Neural primitives recorded on the tape: convolutions, pooling,
//! normalization, activations, dropout, and channel concatenation.

mod activation;
mod conv;
mod dropout;
mod elementwise;
mod norm;
mod pool;

pub use activation::{mish_scalar, mish_scalar_grad, sigmoid_scalar, softplus_scalar};
pub use norm::{apply_bn_updates, recalibrate_bn, BatchNormSpec, BnStatTracker};

use crate::error::{Result, UdetError};

/// Forward-pass regime for batch norm and dropout.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    /// Batch statistics, dropout active.
    Train,
    /// Running statistics, dropout off.
    Infer,
    /// Batch statistics, dropout off: statistics re-estimation passes.
    Calibrate,
}

impl Mode {
    pub fn uses_batch_stats(self) -> bool {
        matches!(self, Mode::Train | Mode::Calibrate)
    }

    pub fn applies_dropout(self) -> bool {
        matches!(self, Mode::Train)
    }
}

/// Spatial padding policy.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Padding {
    /// Zero padding chosen so stride-1 convolution preserves (h, w).
    Same,
    /// No padding.
    Valid,
}

/// Elementwise nonlinearity.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ActivationKind {
    Mish,
    Relu,
    Sigmoid,
    Softplus,
    Identity,
}

/// Declarative 2-D convolution layer description.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv2DSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: Padding,
    pub bias: bool,
}

impl Conv2DSpec {
    pub fn new_3x3_same(in_channels: usize, out_channels: usize) -> Self {
        Conv2DSpec {
            in_channels,
            out_channels,
            kernel: (3, 3),
            stride: 1,
            padding: Padding::Same,
            bias: true,
        }
    }

    pub fn new_1x1(in_channels: usize, out_channels: usize, bias: bool) -> Self {
        Conv2DSpec {
            in_channels,
            out_channels,
            kernel: (1, 1),
            stride: 1,
            padding: Padding::Valid,
            bias,
        }
    }

    /// kh*kw*in*out weights plus out biases when present.
    pub fn param_count(&self) -> usize {
        let (kh, kw) = self.kernel;
        kh * kw * self.in_channels * self.out_channels
            + if self.bias { self.out_channels } else { 0 }
    }

    /// Resolve output dims and padding for an input of (h, w).
    pub(crate) fn geometry(&self, h: usize, w: usize) -> Result<ConvGeom> {
        let (kh, kw) = self.kernel;
        if kh == 0 || kw == 0 || self.stride == 0 {
            return Err(UdetError::InvalidArgument("kernel and stride must be >= 1".into()));
        }
        let (pad_h, pad_w) = match self.padding {
            Padding::Valid => (0, 0),
            Padding::Same => {
                if self.stride != 1 || kh % 2 == 0 || kw % 2 == 0 {
                    return Err(UdetError::InvalidArgument(
                        "same padding supported for stride 1 and odd kernels only".into(),
                    ));
                }
                ((kh - 1) / 2, (kw - 1) / 2)
            }
        };
        let ph = h + 2 * pad_h;
        let pw = w + 2 * pad_w;
        if kh > ph || kw > pw {
            return Err(UdetError::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {ph}x{pw}"),
            ));
        }
        Ok(ConvGeom {
            in_c: self.in_channels,
            out_c: self.out_channels,
            kh,
            kw,
            stride: self.stride,
            pad_h,
            pad_w,
            oh: (ph - kh) / self.stride + 1,
            ow: (pw - kw) / self.stride + 1,
        })
    }
}

/// Fully resolved convolution geometry for one recorded application.
#[derive(Clone, Debug)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub oh: usize,
    pub ow: usize,
}

pub use conv::{convt2x2_param_count, depthwise3x3_param_count};

pub(crate) use activation::activation_backward;
pub(crate) use conv::{conv2d_backward, convt2x2_backward, depthwise3x3_backward};
pub(crate) use norm::batchnorm_backward;
pub(crate) use pool::{maxpool_backward, upsample2x_backward};
