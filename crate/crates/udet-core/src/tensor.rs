//! Dense rank-4 tensor: (batch, channels, height, width), contiguous row-major.

use std::fmt;

use crate::error::{Result, UdetError};
use crate::scalar::Scalar;

/// Shape of a rank-4 tensor. All dimensions are at least 1.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements per batch item.
    pub fn per_item(&self) -> usize {
        self.c * self.h * self.w
    }

    /// Elements per channel plane.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

/// Dense rank-4 value. Biases and per-channel scales use shape (1, c, 1, 1);
/// scalars use (1, 1, 1, 1).
#[derive(Clone, Debug)]
pub struct Tensor4<E: Scalar> {
    shape: Shape4,
    data: Vec<E>,
    /// Accumulated gradient, same layout as `data` when present.
    pub grad: Option<Vec<E>>,
    pub requires_grad: bool,
}

impl<E: Scalar> Tensor4<E> {
    pub fn new(shape: Shape4, data: Vec<E>) -> Result<Self> {
        if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(UdetError::InvalidArgument(format!(
                "tensor dimensions must all be >= 1, got {shape}"
            )));
        }
        if data.len() != shape.numel() {
            return Err(UdetError::shape(
                "tensor_new",
                format!("data length {} != {} elements of {shape}", data.len(), shape.numel()),
            ));
        }
        Ok(Tensor4 { shape, data, grad: None, requires_grad: false })
    }

    pub fn zeros(shape: Shape4) -> Self {
        Tensor4 { shape, data: vec![E::zero(); shape.numel()], grad: None, requires_grad: false }
    }

    pub fn full(shape: Shape4, v: E) -> Self {
        Tensor4 { shape, data: vec![v; shape.numel()], grad: None, requires_grad: false }
    }

    /// Scalar tensor of shape (1,1,1,1).
    pub fn scalar(v: E) -> Self {
        Tensor4::full(Shape4::new(1, 1, 1, 1), v)
    }

    /// Per-channel vector as shape (1, c, 1, 1).
    pub fn channel_vec(values: Vec<E>) -> Result<Self> {
        let c = values.len();
        Tensor4::new(Shape4::new(1, c, 1, 1), values)
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize) -> E) -> Self {
        let data = (0..shape.numel()).map(&mut f).collect();
        Tensor4 { shape, data, grad: None, requires_grad: false }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    pub fn requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> E {
        self.data[self.shape.idx(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: E) {
        let i = self.shape.idx(n, c, y, x);
        self.data[i] = v;
    }

    /// Widen or narrow the element type, preserving shape.
    pub fn cast<F: Scalar>(&self) -> Tensor4<F> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| F::of(v.as_f64())).collect(),
            grad: None,
            requires_grad: self.requires_grad,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
