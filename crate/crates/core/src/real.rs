use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of tensors. `f32` is the working precision,
/// `f64` is used for finite-difference gradient checks.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn erf(self) -> Self;

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64_lossy(v)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `c = a·b + beta·c` for an `m×k` by `k×n` product over strided views,
    /// each stride pair given as (row stride, column stride).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        sa: (usize, usize),
        b: &[Self],
        sb: (usize, usize),
        beta: Self,
        c: &mut [Self],
        sc: (usize, usize),
    );
}

fn view_fits(len: usize, rows: usize, cols: usize, (rs, cs): (usize, usize)) -> bool {
    rows == 0 || cols == 0 || (rows - 1) * rs + (cols - 1) * cs < len
}

macro_rules! strided_gemm {
    ($f:path, $m:ident, $k:ident, $n:ident, $a:ident, $sa:ident, $b:ident, $sb:ident, $beta:ident, $c:ident, $sc:ident) => {{
        assert!(view_fits($a.len(), $m, $k, $sa), "gemm: A view out of bounds");
        assert!(view_fits($b.len(), $k, $n, $sb), "gemm: B view out of bounds");
        assert!(view_fits($c.len(), $m, $n, $sc), "gemm: C view out of bounds");
        if $m == 0 || $n == 0 {
            return;
        }
        // SAFETY: the three views were checked to lie inside their slices,
        // and `c` is uniquely borrowed so it cannot alias `a` or `b`.
        unsafe {
            $f(
                $m,
                $k,
                $n,
                1.0,
                $a.as_ptr(),
                $sa.0 as isize,
                $sa.1 as isize,
                $b.as_ptr(),
                $sb.0 as isize,
                $sb.1 as isize,
                $beta,
                $c.as_mut_ptr(),
                $sc.0 as isize,
                $sc.1 as isize,
            )
        }
    }};
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn erf(self) -> Self {
        libm::erff(self)
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        sa: (usize, usize),
        b: &[f32],
        sb: (usize, usize),
        beta: f32,
        c: &mut [f32],
        sc: (usize, usize),
    ) {
        strided_gemm!(matrixmultiply::sgemm, m, k, n, a, sa, b, sb, beta, c, sc)
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        sa: (usize, usize),
        b: &[f64],
        sb: (usize, usize),
        beta: f64,
        c: &mut [f64],
        sc: (usize, usize),
    ) {
        strided_gemm!(matrixmultiply::dgemm, m, k, n, a, sa, b, sb, beta, c, sc)
    }
}
