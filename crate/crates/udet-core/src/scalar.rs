//! Floating-point element abstraction.
//!
//! Training and inference run in f32; gradient checking runs the same code
//! paths in f64 for the extra headroom central differences need.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Element type of tensors and parameters.
pub trait Scalar:
    Float + FromPrimitive + Sum<Self> + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from f64 (f32 rounds, f64 is exact).
    fn of(v: f64) -> Self;

    /// Widening conversion to f64.
    fn as_f64(self) -> f64;

    /// General matrix multiply with explicit strides:
    /// `C = alpha * A(m x k) * B(k x n) + beta * C(m x n)`.
    ///
    /// `rs*`/`cs*` are row/column strides in elements. Slices must cover the
    /// last addressed element of each operand.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
        rsc: usize,
        csc: usize,
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: usize, cs: usize, what: &str) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) * rs + (cols - 1) * cs;
    assert!(last < len, "{what} slice too short: len {len}, needs index {last}");
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
                rsc: usize,
                csc: usize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                check_extent(a.len(), m, k, rsa, csa, "gemm A");
                check_extent(b.len(), k, n, rsb, csb, "gemm B");
                check_extent(c.len(), m, n, rsc, csc, "gemm C");
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
