//! Thomas elimination for tridiagonal systems and the Sherman-Morrison
//! correction for the periodic (cyclic) case.

use crate::error::{IconError, Result};
use crate::scalar::Scalar;

/// Solve `A x = rhs` where row `i` of `A` is `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1]`.
///
/// `lower[0]` and `upper[n-1]` are ignored.
pub fn solve_tridiagonal<T: Scalar>(lower: &[T], diag: &[T], upper: &[T], rhs: &[T]) -> Result<Vec<T>> {
    let n = diag.len();
    if lower.len() != n || upper.len() != n || rhs.len() != n {
        return Err(IconError::Dimension("tridiagonal bands must match rhs length".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![T::zero(); n];
    let mut d = vec![T::zero(); n];
    let mut pivot = diag[0];
    check_pivot(pivot, 0)?;
    c[0] = upper[0] / pivot;
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * c[i - 1];
        check_pivot(pivot, i)?;
        c[i] = if i + 1 < n { upper[i] / pivot } else { T::zero() };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / pivot;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        let next = x[i + 1];
        x[i] -= c[i] * next;
    }
    Ok(x)
}

fn check_pivot<T: Scalar>(p: T, row: usize) -> Result<()> {
    if p == T::zero() || !p.is_finite() {
        return Err(IconError::Conditioning(format!("zero pivot in tridiagonal solve at row {row}")));
    }
    Ok(())
}

/// Solve a cyclic tridiagonal system: as [`solve_tridiagonal`] plus the corner
/// entries `A[0][n-1] = top_right` and `A[n-1][0] = bottom_left`.
pub fn solve_cyclic_tridiagonal<T: Scalar>(
    lower: &[T],
    diag: &[T],
    upper: &[T],
    top_right: T,
    bottom_left: T,
    rhs: &[T],
) -> Result<Vec<T>> {
    let n = diag.len();
    if n < 3 {
        return Err(IconError::InvalidInput("cyclic system needs at least 3 unknowns".into()));
    }
    // A = B + u v^T with u = (gamma, 0, .., bottom_left), v = (1, 0, .., top_right / gamma).
    let gamma = -diag[0];
    let mut b = diag.to_vec();
    b[0] -= gamma;
    b[n - 1] -= bottom_left * top_right / gamma;
    let x = solve_tridiagonal(lower, &b, upper, rhs)?;
    let mut u = vec![T::zero(); n];
    u[0] = gamma;
    u[n - 1] = bottom_left;
    let z = solve_tridiagonal(lower, &b, upper, &u)?;
    let vx = x[0] + top_right / gamma * x[n - 1];
    let vz = z[0] + top_right / gamma * z[n - 1];
    let denom = T::one() + vz;
    if denom == T::zero() || !denom.is_finite() {
        return Err(IconError::Conditioning("singular cyclic tridiagonal system".into()));
    }
    let f = vx / denom;
    Ok(x.iter().zip(&z).map(|(&xi, &zi)| xi - f * zi).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_apply(lower: &[f64], diag: &[f64], upper: &[f64], tr: f64, bl: f64, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let mut s = diag[i] * x[i];
                if i > 0 {
                    s += lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    s += upper[i] * x[i + 1];
                }
                if i == 0 {
                    s += tr * x[n - 1];
                }
                if i == n - 1 {
                    s += bl * x[0];
                }
                s
            })
            .collect()
    }

    #[test]
    fn thomas_residual() {
        let n = 9;
        let lower: Vec<f64> = (0..n).map(|i| 0.3 + 0.1 * i as f64).collect();
        let diag: Vec<f64> = (0..n).map(|i| 4.0 + (i as f64).sin()).collect();
        let upper: Vec<f64> = (0..n).map(|i| -0.7 + 0.05 * i as f64).collect();
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.9).cos()).collect();
        let x = solve_tridiagonal(&lower, &diag, &upper, &rhs).unwrap();
        let ax = dense_apply(&lower, &diag, &upper, 0.0, 0.0, &x);
        for (a, b) in ax.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn cyclic_residual() {
        let n = 12;
        let lower = vec![-1.0; n];
        let diag = vec![3.0; n];
        let upper = vec![-1.0; n];
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 0.2).collect();
        let x = solve_cyclic_tridiagonal(&lower, &diag, &upper, -1.0, -1.0, &rhs).unwrap();
        let ax = dense_apply(&lower, &diag, &upper, -1.0, -1.0, &x);
        for (a, b) in ax.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let r = solve_tridiagonal(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]);
        assert!(matches!(r, Err(IconError::Conditioning(_))));
    }
}
