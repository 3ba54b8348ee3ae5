use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the whole model is generic over.
///
/// `gemm` computes `c += a * b` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
/// The provided loop is the reference kernel; `f32` and `f64` route to
/// `matrixmultiply`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
        for i in 0..m {
            let row = &mut c[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == Self::zero() {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (cv, &bv) in row.iter_mut().zip(brow) {
                    *cv = *cv + av * bv;
                }
            }
        }
    }

    /// Lossy conversion from `f64` literal constants.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("scalar conversion from f64")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
        if m == 0 || k == 0 || n == 0 {
            return;
        }
        // SAFETY: slices are bounds-checked by the callers' shape checks; strides
        // describe dense row-major storage of exactly m*k, k*n and m*n values.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                1.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Scalar for f32 {
    fn gemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
        if m == 0 || k == 0 || n == 0 {
            return;
        }
        // SAFETY: see the f64 impl.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                1.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}
