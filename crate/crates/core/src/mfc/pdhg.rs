//! Primal-dual hybrid gradient solve of the discretised mean-field control
//! program in the density/momentum variables.
//!
//! Unknowns per time level `n = 1..N`: density `rho^n` on the nodes, and on
//! the faces `i + 1/2` a momentum `m^n` and an averaged density `rt^n`.
//! Constraints:
//!
//! ```text
//! (rho^n_i - rho^{n-1}_i) / dt + (m^n_{i+1/2} - m^n_{i-1/2}) / dx - mu/2 D2 (rho^n + rho^{n-1})_i = 0
//! rt^n_{i+1/2} - (I rho^{n-1} + I rho^n)_{i+1/2} / 2 = 0
//! ```
//!
//! where `I` is the fourth-order node-to-face interpolation, and `rho^0` fixed. Objective: `sum dt dx c |m|^2 / (2 rt) + dx <g, rho^N>`.
//! Densities live in the box `[0, R]`, which makes the dual bound finite at
//! every iterate.

use super::hopf_cole::MfcProblem;
use crate::error::{IconError, Result};

#[derive(Clone, Copy, Debug)]
pub struct PdhgConfig {
    pub max_iters: usize,
    /// Primal step is `ratio` times larger than the dual step.
    pub step_ratio: f64,
    pub residual_tol: f64,
    /// Relative duality-gap tolerance, scaled by `1 + |primal|`.
    pub gap_tol: f64,
    pub density_bound: f64,
    pub check_every: usize,
    /// Internal time steps per step of the problem grid; the returned
    /// density is sampled back onto the problem's time levels.
    pub time_substeps: usize,
}

impl Default for PdhgConfig {
    fn default() -> Self {
        Self {
            max_iters: 2_000_000,
            step_ratio: 10.0,
            residual_tol: 1e-8,
            gap_tol: 1e-4,
            density_bound: 50.0,
            check_every: 200,
            time_substeps: 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PdhgReport {
    /// Density on the full `n_t x n_x` grid including the initial row.
    pub rho: Vec<f64>,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub residual: f64,
    pub iterations: usize,
}

struct Ops {
    n: usize,
    nx: usize,
    dt: f64,
    dx: f64,
    mu: f64,
}

// Fourth-order interpolation from nodes `i - 1 ..= i + 2` to face `i + 1/2`,
// stored as (offset + 1, weight).
const FACE: [(usize, f64); 4] = [(0, -0.0625), (1, 0.5625), (2, 0.5625), (3, -0.0625)];

impl Ops {
    /// Transpose of the face interpolation, evaluated at node `j`.
    fn face_adjoint(&self, st: &[f64], j: usize) -> f64 {
        let nx = self.nx;
        FACE.iter().map(|&(o, w)| w * st[(j + 2 * nx + 1 - o) % nx]).sum()
    }

    fn lap(&self, v: &[f64], out: &mut [f64], scale: f64) {
        let nx = self.nx;
        for i in 0..nx {
            let l = v[(i + nx - 1) % nx];
            let r = v[(i + 1) % nx];
            out[i] += scale * (l - 2.0 * v[i] + r) / (self.dx * self.dx);
        }
    }

    /// Constraint residuals for `(rho, rt, m)`; `rho_first` is the row used for `rho^0`.
    fn apply(&self, rho: &[f64], rt: &[f64], m: &[f64], rho_first: &[f64], c: &mut [f64], s: &mut [f64]) {
        let nx = self.nx;
        c.fill(0.0);
        for t in 0..self.n {
            let cur = &rho[t * nx..(t + 1) * nx];
            let prev = if t == 0 { rho_first } else { &rho[(t - 1) * nx..t * nx] };
            let mt = &m[t * nx..(t + 1) * nx];
            let ct = &mut c[t * nx..(t + 1) * nx];
            for i in 0..nx {
                ct[i] = (cur[i] - prev[i]) / self.dt + (mt[i] - mt[(i + nx - 1) % nx]) / self.dx;
            }
            self.lap(cur, ct, -0.5 * self.mu);
            self.lap(prev, ct, -0.5 * self.mu);
            for i in 0..nx {
                let face: f64 =
                    FACE.iter().map(|&(o, w)| w * (prev[(i + nx + o - 1) % nx] + cur[(i + nx + o - 1) % nx])).sum();
                s[t * nx + i] = rt[t * nx + i] - 0.5 * face;
            }
        }
    }

    /// Adjoint of the linear part of [`Ops::apply`].
    fn adjoint(&self, yc: &[f64], ys: &[f64], grho: &mut [f64], grt: &mut [f64], gm: &mut [f64]) {
        let nx = self.nx;
        grho.fill(0.0);
        for t in 0..self.n {
            let yt = &yc[t * nx..(t + 1) * nx];
            let st = &ys[t * nx..(t + 1) * nx];
            {
                let g = &mut grho[t * nx..(t + 1) * nx];
                for i in 0..nx {
                    g[i] += yt[i] / self.dt - 0.5 * self.face_adjoint(st, i);
                }
                self.lap(yt, g, -0.5 * self.mu);
            }
            if t > 0 {
                let g = &mut grho[(t - 1) * nx..t * nx];
                for i in 0..nx {
                    g[i] += -yt[i] / self.dt - 0.5 * self.face_adjoint(st, i);
                }
                self.lap(yt, g, -0.5 * self.mu);
            }
            for i in 0..nx {
                grt[t * nx + i] = st[i];
                gm[t * nx + i] = (yt[i] - yt[(i + 1) % nx]) / self.dx;
            }
        }
    }
}

/// Proximal map of `(r, m) -> w m^2 / (2 r)` with parameter `gamma = tau w`.
fn prox_perspective(r0: f64, m0: f64, gamma: f64) -> (f64, f64) {
    let a = r0.max(0.0);
    let q = 0.5 * gamma * m0 * m0;
    // Upper bound on the root; Newton is monotone from the right.
    let mut p = a + q / ((a + gamma) * (a + gamma));
    for _ in 0..100 {
        let h = (p - r0) * (p + gamma) * (p + gamma) - q;
        let dh = (p + gamma) * (p + gamma) + 2.0 * (p - r0) * (p + gamma);
        let step = h / dh;
        p -= step;
        if step.abs() <= 1e-15 * (1.0 + p.abs()) {
            break;
        }
    }
    if p > 0.0 {
        (p, p * m0 / (p + gamma))
    } else {
        (0.0, 0.0)
    }
}

pub fn pdhg_oracle(p: &MfcProblem, cfg: &PdhgConfig) -> Result<PdhgReport> {
    p.validate()?;
    let k = cfg.time_substeps;
    if k == 0 {
        return Err(IconError::InvalidInput("time_substeps must be positive".into()));
    }
    let fine = p.clone().with_time_steps((p.n_t - 1) * k + 1);
    let mut rep = solve_program(&fine, cfg)?;
    let nx = p.n_x();
    rep.rho = (0..p.n_t).flat_map(|t| rep.rho[t * k * nx..(t * k + 1) * nx].to_vec()).collect();
    Ok(rep)
}

fn solve_program(p: &MfcProblem, cfg: &PdhgConfig) -> Result<PdhgReport> {
    let nx = p.n_x();
    let n = p.n_t - 1;
    if n * nx > 2000 {
        return Err(IconError::InvalidInput(format!("PDHG oracle is for small grids, got {} x {nx}", p.n_t)));
    }
    let ops = Ops { n, nx, dt: p.dt(), dx: p.dx(), mu: p.mu };
    let w = ops.dt * ops.dx * p.c_coef;
    let size = n * nx;
    let zeros_row = vec![0.0; nx];

    // Operator norm by power iteration on K^T K.
    let mut vr: Vec<f64> = (0..size).map(|i| 1.0 + (i as f64 * 0.731).sin()).collect();
    let mut vt: Vec<f64> = (0..size).map(|i| (i as f64 * 1.37).cos()).collect();
    let mut vm: Vec<f64> = (0..size).map(|i| (i as f64 * 0.53).sin()).collect();
    let (mut c, mut s) = (vec![0.0; size], vec![0.0; size]);
    let mut norm2 = 0.0;
    for _ in 0..200 {
        ops.apply(&vr, &vt, &vm, &zeros_row, &mut c, &mut s);
        ops.adjoint(&c, &s, &mut vr, &mut vt, &mut vm);
        norm2 = vr.iter().chain(&vt).chain(&vm).map(|v| v * v).sum::<f64>().sqrt();
        for v in vr.iter_mut().chain(vt.iter_mut()).chain(vm.iter_mut()) {
            *v /= norm2;
        }
    }
    let op_norm = norm2.sqrt();
    let tau = 0.99 * cfg.step_ratio / op_norm;
    let sigma = 0.99 / (cfg.step_ratio * op_norm);
    let bound = cfg.density_bound;

    let mut rho: Vec<f64> = (0..n).flat_map(|_| p.rho0.iter().copied()).collect();
    let mut rt = rho.clone();
    let mut m = vec![0.0; size];
    let (mut rho_bar, mut rt_bar, mut m_bar) = (rho.clone(), rt.clone(), m.clone());
    let (mut yc, mut ys) = (vec![0.0; size], vec![0.0; size]);
    let (mut grho, mut grt, mut gm) = (vec![0.0; size], vec![0.0; size], vec![0.0; size]);

    let objective = |rho: &[f64], rt: &[f64], m: &[f64]| -> f64 {
        let kinetic: f64 = rt
            .iter()
            .zip(m)
            .map(|(&r, &mv)| {
                if r > 0.0 {
                    w * mv * mv / (2.0 * r)
                } else if mv == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .sum();
        kinetic + ops.dx * rho[(n - 1) * nx..].iter().zip(&p.g).map(|(r, g)| r * g).sum::<f64>()
    };

    for iter in 1..=cfg.max_iters {
        ops.apply(&rho_bar, &rt_bar, &m_bar, &p.rho0, &mut c, &mut s);
        for (y, v) in yc.iter_mut().zip(&c) {
            *y += sigma * v;
        }
        for (y, v) in ys.iter_mut().zip(&s) {
            *y += sigma * v;
        }
        ops.adjoint(&yc, &ys, &mut grho, &mut grt, &mut gm);
        for k in 0..size {
            let old_rho = rho[k];
            let mut r = rho[k] - tau * grho[k];
            if k >= (n - 1) * nx {
                r -= tau * ops.dx * p.g[k - (n - 1) * nx];
            }
            rho[k] = r.clamp(0.0, bound);
            rho_bar[k] = 2.0 * rho[k] - old_rho;

            let (old_rt, old_m) = (rt[k], m[k]);
            let (nr, nm) = prox_perspective(rt[k] - tau * grt[k], m[k] - tau * gm[k], tau * w);
            rt[k] = nr;
            m[k] = nm;
            rt_bar[k] = 2.0 * nr - old_rt;
            m_bar[k] = 2.0 * nm - old_m;
        }

        if iter % cfg.check_every == 0 || iter == cfg.max_iters {
            ops.apply(&rho, &rt, &m, &p.rho0, &mut c, &mut s);
            let residual = c.iter().chain(&s).map(|v| v.abs()).fold(0.0, f64::max);
            let primal = objective(&rho, &rt, &m);
            let dual = dual_bound(&ops, &yc, &ys, &p.rho0, &p.g, w, bound);
            let gap = primal - dual;
            if residual <= cfg.residual_tol && gap.abs() <= cfg.gap_tol * (1.0 + primal.abs()) {
                let max_rho = rho.iter().chain(&rt).copied().fold(0.0, f64::max);
                if max_rho >= bound {
                    return Err(IconError::OracleFailure(format!("density bound {bound} is active")));
                }
                let mut full = p.rho0.clone();
                full.extend_from_slice(&rho);
                return Ok(PdhgReport { rho: full, primal, dual, gap, residual, iterations: iter });
            }
            if !primal.is_finite() && residual.is_nan() {
                return Err(IconError::OracleFailure(format!("iterates blew up at iteration {iter}")));
            }
        }
    }
    Err(IconError::OracleFailure(format!("no convergence within {} iterations", cfg.max_iters)))
}

/// Lagrange dual value `-<y, b> + inf_x [G(x) + <K^T y, x>]` over the density box.
fn dual_bound(ops: &Ops, yc: &[f64], ys: &[f64], rho0: &[f64], g: &[f64], w: f64, bound: f64) -> f64 {
    let nx = ops.nx;
    let n = ops.n;
    let size = n * nx;
    let (mut sr, mut st, mut sm) = (vec![0.0; size], vec![0.0; size], vec![0.0; size]);
    ops.adjoint(yc, ys, &mut sr, &mut st, &mut sm);
    // b = -K(0): only the first level sees rho0.
    let zeros = vec![0.0; size];
    let (mut c0, mut s0) = (vec![0.0; size], vec![0.0; size]);
    ops.apply(&zeros, &zeros, &zeros, rho0, &mut c0, &mut s0);
    let y_dot_b: f64 =
        -(yc.iter().zip(&c0).map(|(a, b)| a * b).sum::<f64>() + ys.iter().zip(&s0).map(|(a, b)| a * b).sum::<f64>());
    let mut inf = 0.0;
    for k in 0..size {
        let mut coef = sr[k];
        if k >= (n - 1) * nx {
            coef += ops.dx * g[k - (n - 1) * nx];
        }
        inf += bound * coef.min(0.0);
        inf += bound * (st[k] - sm[k] * sm[k] / (2.0 * w)).min(0.0);
    }
    -y_dot_b + inf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mfc::CnStepper;

    #[test]
    fn adjoint_matches_dot_products() {
        let ops = Ops { n: 3, nx: 7, dt: 0.2, dx: 1.0 / 7.0, mu: 0.03 };
        let size = 21;
        let v = |s: f64| -> Vec<f64> { (0..size).map(|i| (i as f64 * s).sin()).collect() };
        let (r, t, m) = (v(0.7), v(1.3), v(2.1));
        let (yc, ys) = (v(0.4), v(0.9));
        let (mut c, mut s) = (vec![0.0; size], vec![0.0; size]);
        ops.apply(&r, &t, &m, &[0.0; 7], &mut c, &mut s);
        let (mut gr, mut gt, mut gm) = (vec![0.0; size], vec![0.0; size], vec![0.0; size]);
        ops.adjoint(&yc, &ys, &mut gr, &mut gt, &mut gm);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let lhs = dot(&c, &yc) + dot(&s, &ys);
        let rhs = dot(&r, &gr) + dot(&t, &gt) + dot(&m, &gm);
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn prox_satisfies_optimality() {
        for &(r0, m0, gamma) in &[(1.0, 0.5, 0.1), (0.2, -2.0, 0.05), (3.0, 0.0, 1.0)] {
            let (r, m) = prox_perspective(r0, m0, gamma);
            // gradient of gamma m^2/(2r) + ((r-r0)^2 + (m-m0)^2)/2
            let gr = -gamma * m * m / (2.0 * r * r) + (r - r0);
            let gm = gamma * m / r + (m - m0);
            assert!(gr.abs() < 1e-10 && gm.abs() < 1e-10, "{r0} {m0}");
        }
        assert_eq!(prox_perspective(-1.0, 0.1, 0.1), (0.0, 0.0));
    }

    #[test]
    fn zero_cost_recovers_heat_flow() {
        let nx = 20;
        let dx = 1.0 / nx as f64;
        let raw: Vec<f64> = (0..nx).map(|i| 1.0 + 0.5 * (std::f64::consts::TAU * i as f64 * dx).sin()).collect();
        let p = MfcProblem::new(vec![0.0; nx], raw).with_time_steps(11);
        let rep = pdhg_oracle(&p, &PdhgConfig::default()).unwrap();
        let stepper = CnStepper::new(nx, p.mu, p.dt(), p.dx());
        let mut cur = p.rho0.clone();
        for t in 1..p.n_t {
            cur = stepper.step(&cur).unwrap();
            let row = &rep.rho[t * nx..(t + 1) * nx];
            let err = row.iter().zip(&cur).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 0.01, "t={t} err {err}");
        }
        assert!(rep.gap.abs() <= 1e-4 * (1.0 + rep.primal.abs()));
    }
}
