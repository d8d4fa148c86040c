//! Floating-point scalar abstraction for the numeric core.
//!
//! Everything under [`crate::autodiff`], [`crate::gat`] and the optimizer is
//! generic over [`Scalar`]; the pipeline instantiates `f64` (see the aliases
//! at the crate root). `f32` and `f64` route matrix products through
//! `matrixmultiply`; any other `Float` falls back to the naive kernel.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum + Display + Debug + Send + Sync + 'static
{
    /// `c = a · b + beta · c` over strided row-major storage.
    ///
    /// `a` is logically `m×k` with strides `(rsa, csa)`, `b` is `k×n` with
    /// `(rsb, csb)`, `c` is contiguous row-major `m×n`.
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    ) {
        debug_assert_eq!(c.len(), m * n);
        let at = |i: usize, j: usize| {
            let off = i as isize * rsa + j as isize * csa;
            a[off as usize]
        };
        let bt = |i: usize, j: usize| {
            let off = i as isize * rsb + j as isize * csb;
            b[off as usize]
        };
        for i in 0..m {
            for j in 0..n {
                let mut acc = Self::zero();
                for l in 0..k {
                    acc = acc + at(i, l) * bt(l, j);
                }
                c[i * n + j] = acc + beta * c[i * n + j];
            }
        }
    }

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 not representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Scalar for f64 {
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    ) {
        debug_assert_eq!(c.len(), m * n);
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Scalar for f32 {
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    ) {
        debug_assert_eq!(c.len(), m * n);
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}
