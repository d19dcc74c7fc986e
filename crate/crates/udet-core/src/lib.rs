//! Lung-nodule segmentation engine: a U-shaped encoder/decoder with a
//! weighted bidirectional feature-pyramid bridge, trained with weighted
//! binary cross-entropy.
//!
//! Everything runs on a small reverse-mode autodiff tape over dense rank-4
//! tensors. Training and inference use f32; the same graphs run in f64 for
//! finite-difference gradient verification.

pub mod bifpn;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
mod parallel;
pub mod params;
pub mod report;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Result, UdetError};
pub use ops::{ActivationKind, Conv2DSpec, Mode, Padding};
pub use params::{ParamId, ParamRegistry, ParamSnapshot};
pub use scalar::Scalar;
pub use tape::{Tape, VarId};
pub use tensor::{Shape4, Tensor4};
