//! Scalar abstraction shared by the tensor engine, the model and the metrics.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type: `f32` or `f64`.
///
/// `gemm` is the only hot kernel; both concrete types route it through
/// `matrixmultiply`, other implementors can fall back to [`naive_gemm`].
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// `c = a · b + beta · c` on strided row/column layouts.
    ///
    /// `a` is `m×k` with strides `(rsa, csa)`, `b` is `k×n` with `(rsb, csb)`,
    /// `c` is `m×n` row-major and contiguous.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
    );

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

/// Reference triple loop; accumulates in `S`.
#[allow(clippy::too_many_arguments)]
pub fn naive_gemm<S: Float + AddAssign>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    rsa: usize,
    csa: usize,
    b: &[S],
    rsb: usize,
    csb: usize,
    beta: S,
    c: &mut [S],
) {
    for i in 0..m {
        for j in 0..n {
            let mut acc = S::zero();
            for p in 0..k {
                acc += a[i * rsa + p * csa] * b[p * rsb + j * csb];
            }
            let out = &mut c[i * n + j];
            *out = if beta == S::zero() { acc } else { beta * *out + acc };
        }
    }
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    c.iter_mut().for_each(|v| *v *= beta);
                    return;
                }
                let a_extent = (m - 1) * rsa + (k - 1) * csa + 1;
                let b_extent = (k - 1) * rsb + (n - 1) * csb + 1;
                assert!(a.len() >= a_extent && b.len() >= b_extent && c.len() >= m * n);
                // SAFETY: extents checked above; c is contiguous row-major m×n.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
