//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, NumCast};

/// Floating point scalar: `f32` or `f64`.
///
/// Besides the usual float arithmetic this carries the number of significant
/// decimal digits needed for a lossless text round trip and a strided matrix
/// product kernel, so the f32/f64 impls can route to an optimized gemm.
pub trait Real:
    Float
    + FromPrimitive
    + NumCast
    + NumAssign
    + Sum
    + LowerExp
    + Display
    + Debug
    + FromStr
    + Default
    + Send
    + Sync
    + 'static
{
    /// Significant digits printed when serializing (round-trip exact).
    const SIG_DIGITS: usize;

    /// `c = a · b` for an `m×k` by `k×n` product, all operands described by
    /// row/column strides. `c` is overwritten.
    ///
    /// # Safety
    /// Strides and dimensions must describe in-bounds accesses of the slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    /// Convert from `f64`, panicking only if the target cannot hold it.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    const SIG_DIGITS: usize = 17;

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 0.0, c, rsc, csc);
    }
}

impl Real for f32 {
    const SIG_DIGITS: usize = 9;

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 0.0, c, rsc, csc);
    }
}

/// Format a scalar with enough digits to parse back to the identical value.
pub fn format_exact<T: Real>(x: T) -> String {
    format!("{:.*e}", T::SIG_DIGITS - 1, x)
}

/// Parse a scalar token; returns `None` on anything that is not a finite number.
pub fn parse_real<T: Real>(token: &str) -> Option<T> {
    token.parse::<T>().ok().filter(|v| v.is_finite())
}
