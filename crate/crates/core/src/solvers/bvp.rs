use super::grid::Grid1D;
use super::tridiag::solve_tridiagonal;
use crate::error::{IconError, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

pub const LINEAR_RD_LAMBDA: f64 = 0.05;
pub const NONLINEAR_RD_LAMBDA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BvpFamily {
    Poisson,
    LinearRd,
    NonlinearRd,
}

/// Parameters of the two-point boundary-value families on `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BvpParams {
    pub family: BvpFamily,
    pub u0: f64,
    pub u1: f64,
    pub a: f64,
    pub c_const: f64,
    pub k_const: f64,
    pub lambda: f64,
}

impl BvpParams {
    pub fn poisson(u0: f64, u1: f64) -> Self {
        Self { family: BvpFamily::Poisson, u0, u1, a: 0.0, c_const: 0.0, k_const: 0.0, lambda: 0.0 }
    }

    pub fn linear_rd(u0: f64, u1: f64, a: f64, c_const: f64) -> Self {
        Self { family: BvpFamily::LinearRd, u0, u1, a, c_const, k_const: 0.0, lambda: LINEAR_RD_LAMBDA }
    }

    pub fn nonlinear_rd(u0: f64, u1: f64, a: f64, k_const: f64) -> Self {
        Self { family: BvpFamily::NonlinearRd, u0, u1, a, c_const: 0.0, k_const, lambda: NONLINEAR_RD_LAMBDA }
    }
}

/// Second derivative: central stencil inside, second-order one-sided stencils
/// at the two ends (falls back to the single interior value when n = 3).
pub fn second_derivative<T: Scalar>(v: &[T], dx: T) -> Result<Vec<T>> {
    let n = v.len();
    if n < 3 {
        return Err(IconError::InvalidInput(format!("second derivative needs n >= 3, got {n}")));
    }
    let inv = T::one() / (dx * dx);
    let two = T::of(2.0);
    let mut out = vec![T::zero(); n];
    for i in 1..n - 1 {
        out[i] = (v[i - 1] - two * v[i] + v[i + 1]) * inv;
    }
    if n == 3 {
        out[0] = out[1];
        out[2] = out[1];
    } else {
        let (four, five) = (T::of(4.0), T::of(5.0));
        out[0] = (two * v[0] - five * v[1] + four * v[2] - v[3]) * inv;
        out[n - 1] = (two * v[n - 1] - five * v[n - 2] + four * v[n - 3] - v[n - 4]) * inv;
    }
    Ok(out)
}

fn check_bvp_input<T: Scalar>(values: &[T], grid: &Grid1D, what: &str) -> Result<()> {
    if grid.len() < 3 {
        return Err(IconError::InvalidInput("boundary-value grid needs n >= 3".into()));
    }
    if values.len() != grid.len() {
        return Err(IconError::Dimension(format!("{what} has {} samples, grid {}", values.len(), grid.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(IconError::InvalidInput(format!("non-finite {what}")));
    }
    Ok(())
}

/// Dirichlet solve of `-s u'' + k u = f` with the central three-point stencil.
fn solve_dirichlet<T: Scalar>(s: T, k: &[T], f: &[T], dx: T, u0: T, u1: T) -> Result<Vec<T>> {
    let n = f.len();
    let m = n - 2;
    let h2 = dx * dx;
    let lower = vec![-s; m];
    let upper = vec![-s; m];
    let diag: Vec<T> = (1..n - 1).map(|i| T::of(2.0) * s + k[i] * h2).collect();
    let mut rhs: Vec<T> = (1..n - 1).map(|i| f[i] * h2).collect();
    rhs[0] += s * u0;
    rhs[m - 1] += s * u1;
    let inner = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
    let mut u = Vec::with_capacity(n);
    u.push(u0);
    u.extend(inner);
    u.push(u1);
    Ok(u)
}

/// `u'' = c` on `grid` with `u(lo) = u0`, `u(hi) = u1`.
pub fn solve_poisson<T: Scalar>(c: &[T], grid: &Grid1D, u0: T, u1: T) -> Result<Vec<T>> {
    check_bvp_input(c, grid, "c")?;
    let zeros = vec![T::zero(); c.len()];
    // u'' = c  <=>  -u'' = -c
    let f: Vec<T> = c.iter().map(|&v| -v).collect();
    solve_dirichlet(T::one(), &zeros, &f, T::of(grid.dx()), u0, u1)
}

/// `-lambda a u'' + k(x) u = c` with constant `c` and Dirichlet data from `params`.
pub fn solve_linear_rd<T: Scalar>(k: &[T], params: &BvpParams, grid: &Grid1D) -> Result<Vec<T>> {
    check_bvp_input(k, grid, "k")?;
    if !(params.a > 0.0) {
        return Err(IconError::InvalidInput(format!("diffusion weight a = {} must be positive", params.a)));
    }
    let s = T::of(params.lambda * params.a);
    let f = vec![T::of(params.c_const); k.len()];
    solve_dirichlet(s, k, &f, T::of(grid.dx()), T::of(params.u0), T::of(params.u1))
}

/// Affinely map `u_hat` onto the boundary data and evaluate the source
/// `c = -lambda a u'' + k u^3` that makes the pair an exact discrete solution.
pub fn nonlinear_rd_construct<T: Scalar>(u_hat: &[T], params: &BvpParams, grid: &Grid1D) -> Result<(Vec<T>, Vec<T>)> {
    check_bvp_input(u_hat, grid, "u_hat")?;
    let n = u_hat.len();
    let alpha = T::of(params.u0) - u_hat[0];
    let beta = (T::of(params.u1) - u_hat[n - 1]) - alpha;
    let xs = grid.points();
    let mut u: Vec<T> = u_hat.iter().zip(&xs).map(|(&v, &x)| v + alpha + beta * T::of(x)).collect();
    u[0] = T::of(params.u0);
    u[n - 1] = T::of(params.u1);
    let c = nonlinear_rd_source(&u, params, grid)?;
    Ok((u, c))
}

/// Source term of the nonlinear reaction-diffusion equation for a given `u`.
pub fn nonlinear_rd_source<T: Scalar>(u: &[T], params: &BvpParams, grid: &Grid1D) -> Result<Vec<T>> {
    let d2 = second_derivative(u, T::of(grid.dx()))?;
    let s = T::of(params.lambda * params.a);
    let k = T::of(params.k_const);
    Ok(u.iter().zip(&d2).map(|(&v, &dd)| -s * dd + k * v * v * v).collect())
}
