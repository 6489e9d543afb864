use super::grid::Grid1D;
use crate::error::{IconError, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// RK4 substeps per grid interval.
pub const DEFAULT_SUBSTEPS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OdeFamily {
    /// `u' = a1 c + a2`
    Ode1,
    /// `u' = a1 c u + a2`
    Ode2,
    /// `u' = a1 u + a2 c + a3`
    Ode3,
    /// `u' = a1 u c + b u + a2`
    NewOde,
}

/// Coefficients of one ODE operator. Coefficients the family does not read are zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeParams {
    pub family: OdeFamily,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub b: f64,
}

impl OdeParams {
    pub fn ode1(a1: f64, a2: f64) -> Self {
        Self { family: OdeFamily::Ode1, a1, a2, a3: 0.0, b: 0.0 }
    }

    pub fn ode2(a1: f64, a2: f64) -> Self {
        Self { family: OdeFamily::Ode2, a1, a2, a3: 0.0, b: 0.0 }
    }

    pub fn ode3(a1: f64, a2: f64, a3: f64) -> Self {
        Self { family: OdeFamily::Ode3, a1, a2, a3, b: 0.0 }
    }

    pub fn new_ode(a1: f64, a2: f64, b: f64) -> Self {
        Self { family: OdeFamily::NewOde, a1, a2, a3: 0.0, b }
    }

    #[inline]
    pub fn rhs<T: Scalar>(&self, u: T, c: T) -> T {
        let (a1, a2, a3, b) = (T::of(self.a1), T::of(self.a2), T::of(self.a3), T::of(self.b));
        match self.family {
            OdeFamily::Ode1 => a1 * c + a2,
            OdeFamily::Ode2 => a1 * c * u + a2,
            OdeFamily::Ode3 => a1 * u + a2 * c + a3,
            OdeFamily::NewOde => a1 * u * c + b * u + a2,
        }
    }
}

/// Integrate the family ODE over `grid` from `u(grid.lo) = u0`, with `c`
/// sampled on the grid and linearly interpolated in between.
pub fn solve_ode_forward<T: Scalar>(params: &OdeParams, u0: T, c: &[T], grid: &Grid1D) -> Result<Vec<T>> {
    solve_ode_forward_with_substeps(params, u0, c, grid, DEFAULT_SUBSTEPS)
}

/// Classical RK4 with `substeps` equal steps per grid interval.
pub fn solve_ode_forward_with_substeps<T: Scalar>(
    params: &OdeParams,
    u0: T,
    c: &[T],
    grid: &Grid1D,
    substeps: usize,
) -> Result<Vec<T>> {
    if c.len() != grid.len() {
        return Err(IconError::Dimension(format!("c has {} samples, grid {}", c.len(), grid.len())));
    }
    if substeps == 0 {
        return Err(IconError::InvalidInput("substeps must be positive".into()));
    }
    if !u0.is_finite() || c.iter().any(|v| !v.is_finite()) {
        return Err(IconError::InvalidInput("non-finite ODE input".into()));
    }
    let dt = T::of(grid.dx());
    let h = dt / T::of(substeps as f64);
    let half = T::of(0.5);
    let sixth = T::of(1.0 / 6.0);
    let two = T::of(2.0);
    let mut out = Vec::with_capacity(grid.len());
    let mut u = u0;
    out.push(u);
    for i in 0..grid.len() - 1 {
        let (c0, c1) = (c[i], c[i + 1]);
        let slope = (c1 - c0) / dt;
        let c_at = |s: T| c0 + slope * s;
        for k in 0..substeps {
            let s = h * T::of(k as f64);
            let cm = c_at(s + half * h);
            let k1 = params.rhs(u, c_at(s));
            let k2 = params.rhs(u + half * h * k1, cm);
            let k3 = params.rhs(u + half * h * k2, cm);
            let k4 = params.rhs(u + h * k3, c_at(s + h));
            u += h * sixth * (k1 + two * k2 + two * k3 + k4);
        }
        if !u.is_finite() {
            return Err(IconError::Divergence { t: grid.point(i + 1) });
        }
        out.push(u);
    }
    Ok(out)
}

/// Damped oscillator `A sin(2 pi t / T + eta) exp(-k t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscParams {
    pub amplitude: f64,
    pub period: f64,
    pub phase: f64,
    pub damping: f64,
}

pub fn oscillator<T: Scalar>(params: &OscParams, ts: &[T]) -> Vec<T> {
    let a = T::of(params.amplitude);
    let w = T::TAU() / T::of(params.period);
    let eta = T::of(params.phase);
    let k = T::of(params.damping);
    ts.iter().map(|&t| a * (w * t + eta).sin() * (-k * t).exp()).collect()
}
