//! Floating-point scalar abstraction shared by the numerical kernels and the model.

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// f32 or f64.
///
/// Besides the usual arithmetic bounds this carries a dense matrix-multiply
/// entry point so generic code reaches the tuned `sgemm`/`dgemm` kernels.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Short name used in checkpoint headers.
    const NAME: &'static str;

    /// `C = alpha * A B + beta * C` with explicit row/column strides.
    ///
    /// A is m x k, B is k x n, C is m x n.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    /// `v[i] = exp(v[i])`.
    fn exp_in_place(v: &mut [Self]);

    /// `v[i] = tanh(v[i])`.
    fn tanh_in_place(v: &mut [Self]);

    /// Sum with eight interleaved accumulators (fixed order, vectorisable).
    fn sum_lanes(v: &[Self]) -> Self {
        let mut acc = [Self::zero(); 8];
        let chunks = v.chunks_exact(8);
        let rest = chunks.remainder();
        for c in chunks {
            for i in 0..8 {
                acc[i] += c[i];
            }
        }
        let mut total = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
        for &x in rest {
            total += x;
        }
        total
    }

    /// Dot product with the accumulation order of [`Scalar::sum_lanes`].
    fn dot_lanes(a: &[Self], b: &[Self]) -> Self {
        let mut acc = [Self::zero(); 8];
        let n = a.len().min(b.len());
        let full = n / 8 * 8;
        for (ca, cb) in a[..full].chunks_exact(8).zip(b[..full].chunks_exact(8)) {
            for i in 0..8 {
                acc[i] += ca[i] * cb[i];
            }
        }
        let mut total = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
        for i in full..n {
            total += a[i] * b[i];
        }
        total
    }

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to any Scalar")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

// The asserts check that the strided extents fit in the slices, which is
// what makes the raw-pointer calls below sound.
fn extent(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
}

/// Branch-free `exp` for f32 (relative error below 3e-7), written so the
/// loop vectorises.
fn exp_f32(v: &mut [f32]) {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_145_75;
    const LN2_LO: f32 = 1.428_606_8e-6;
    const ROUND: f32 = 12_582_912.0; // 1.5 * 2^23
    for x in v.iter_mut() {
        let a = x.clamp(-87.0, 88.0);
        // Adding ROUND leaves round(a * log2 e) in the low mantissa bits.
        let t = a * LOG2E + ROUND;
        let n = t - ROUND;
        let r = a - n * LN2_HI - n * LN2_LO;
        let p =
            1.0 + r * (1.0 + r * (0.5 + r * (1.0 / 6.0 + r * (1.0 / 24.0 + r * (1.0 / 120.0 + r * (1.0 / 720.0))))));
        let scale = f32::from_bits((t.to_bits().wrapping_sub(ROUND.to_bits()).wrapping_add(127)) << 23);
        *x = p * scale;
    }
}

fn tanh_f32(v: &mut [f32]) {
    for x in v.iter_mut() {
        *x *= 2.0;
    }
    exp_f32(v);
    for x in v.iter_mut() {
        *x = 1.0 - 2.0 / (*x + 1.0);
    }
}

fn exp_f64(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = x.exp();
    }
}

fn tanh_f64(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = x.tanh();
    }
}

macro_rules! impl_scalar {
    ($t:ty, $name:expr, $kernel:path, $exp:path, $tanh:path) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            fn exp_in_place(v: &mut [Self]) {
                $exp(v)
            }

            fn tanh_in_place(v: &mut [Self]) {
                $tanh(v)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
                assert!(extent(m, k, rsa, csa) <= a.len(), "gemm: A out of bounds");
                assert!(extent(k, n, rsb, csb) <= b.len(), "gemm: B out of bounds");
                assert!(extent(m, n, rsc, csc) <= c.len(), "gemm: C out of bounds");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: extents checked above; A, B are shared borrows and C is a
                // unique borrow, so no aliasing between inputs and output.
                unsafe {
                    $kernel(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc);
                }
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm, exp_f32, tanh_f32);
impl_scalar!(f64, "f64", matrixmultiply::dgemm, exp_f64, tanh_f64);

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_product() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![0.0; m * n];
        f64::gemm(m, k, n, 1.0, &a, k as isize, 1, &b, n as isize, 1, 0.0, &mut c, n as isize, 1);
        for (x, y) in c.iter().zip(naive(m, k, n, &a, &b)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gemm_transposed_strides() {
        // B^T via swapped strides: (A B^T) where B stored n x k.
        let (m, k, n) = (3, 4, 2);
        let a: Vec<f32> = (0..m * k).map(|i| i as f32).collect();
        let bt: Vec<f32> = (0..n * k).map(|i| (i as f32) * 0.5).collect();
        let mut c = vec![0.0f32; m * n];
        f32::gemm(m, k, n, 1.0, &a, k as isize, 1, &bt, 1, k as isize, 0.0, &mut c, n as isize, 1);
        for i in 0..m {
            for j in 0..n {
                let want: f32 = (0..k).map(|p| a[i * k + p] * bt[j * k + p]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn fast_f32_exp_and_tanh() {
        let xs: Vec<f32> = (0..20_001).map(|i| -80.0 + i as f32 * 0.008).collect();
        let mut e = xs.clone();
        f32::exp_in_place(&mut e);
        for (x, y) in xs.iter().zip(&e) {
            let want = (*x as f64).exp();
            assert!(((*y as f64) - want).abs() <= 3e-7 * want, "exp({x})");
        }
        let xs: Vec<f32> = (0..20_001).map(|i| -20.0 + i as f32 * 0.002).collect();
        let mut t = xs.clone();
        f32::tanh_in_place(&mut t);
        for (x, y) in xs.iter().zip(&t) {
            assert!(((*y as f64) - (*x as f64).tanh()).abs() < 3e-7, "tanh({x})");
        }
        let mut big = [200.0f32, -200.0];
        f32::exp_in_place(&mut big);
        assert!(big[0].is_finite() && big[1] >= 0.0 && big[1] < 1e-37);
    }
}
