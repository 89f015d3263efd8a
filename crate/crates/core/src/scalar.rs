use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point element type of every array in the crate: `f32` or `f64`.
///
/// Besides the `num-traits` arithmetic it carries a dense matrix product so
/// that each precision dispatches to its own blocked kernel.
pub trait Scalar:
    Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from `f64`; exact for `f64`.
    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c ← beta·c + a·b` for strided matrices `a: m×k`, `b: k×n`, `c: m×n`.
    ///
    /// Strides are in elements. Slices are bounds-checked against the largest
    /// index the strides can reach before the kernel runs.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );
}

fn reach(rows: usize, cols: usize, (rs, cs): (usize, usize)) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

fn check_gemm_bounds(
    m: usize,
    k: usize,
    n: usize,
    a_len: usize,
    a_strides: (usize, usize),
    b_len: usize,
    b_strides: (usize, usize),
    c_len: usize,
    c_strides: (usize, usize),
) {
    assert!(reach(m, k, a_strides) <= a_len, "gemm: lhs out of bounds");
    assert!(reach(k, n, b_strides) <= b_len, "gemm: rhs out of bounds");
    assert!(reach(m, n, c_strides) <= c_len, "gemm: output out of bounds");
    // Overlapping output rows/cols would alias under the kernel's writes.
    if m > 1 && n > 1 {
        assert!(
            c_strides.0 != c_strides.1 && c_strides.0 != 0 && c_strides.1 != 0,
            "gemm: aliased output"
        );
    }
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
                c_strides: (usize, usize),
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                check_gemm_bounds(
                    m,
                    k,
                    n,
                    a.len(),
                    a_strides,
                    b.len(),
                    b_strides,
                    c.len(),
                    c_strides,
                );
                if k == 0 {
                    for i in 0..m {
                        for j in 0..n {
                            let at = i * c_strides.0 + j * c_strides.1;
                            c[at] *= beta;
                        }
                    }
                    return;
                }
                // SAFETY: every index the kernel touches was bounds-checked above
                // and `c` is uniquely borrowed.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0 as isize,
                        c_strides.1 as isize,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
