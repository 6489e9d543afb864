//! Independent reference computations shared by the integration tests and
//! the acceptance target.
#![allow(dead_code)]

use icon_core::dataset::{sample_operator, sample_source, ProblemFamily, ODE_POINTS};
use icon_core::mfc::MfcProblem;
use icon_core::solvers::{nonlinear_rd_construct, solve_poisson, BvpParams, Grid1D, OdeFamily, OdeParams};
use icon_core::stochastic::{normalize_density, sample_gp, softplus, zero_mean, GpSpec, Quadrature, SeedTree};

// 5-point Gauss-Legendre rule on [-1, 1].
const GL_NODES: [f64; 5] =
    [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

fn gauss<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    GL_NODES.iter().zip(&GL_WEIGHTS).map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

/// Closed-form solution of the linear ODE `u' = p(t) u + q(t)` with `c`
/// linear between grid points, via the integrating factor on each interval.
pub fn ode_closed_form(params: &OdeParams, u0: f64, c: &[f64], grid: &Grid1D) -> Vec<f64> {
    let mut u = vec![u0];
    for i in 0..grid.len() - 1 {
        let (t0, t1) = (grid.point(i), grid.point(i + 1));
        let h = t1 - t0;
        let (c0, c1) = (c[i], c[i + 1]);
        let cl = |t: f64| c0 + (c1 - c0) * (t - t0) / h;
        // Primitive of p(t) from t0.
        let pint = |t: f64| {
            let s = t - t0;
            let ci = c0 * s + 0.5 * (c1 - c0) * s * s / h;
            match params.family {
                OdeFamily::Ode1 => 0.0,
                OdeFamily::Ode2 => params.a1 * ci,
                OdeFamily::Ode3 => params.a1 * s,
                OdeFamily::NewOde => params.a1 * ci + params.b * s,
            }
        };
        let q = |t: f64| match params.family {
            OdeFamily::Ode1 => params.a1 * cl(t) + params.a2,
            OdeFamily::Ode2 | OdeFamily::NewOde => params.a2,
            OdeFamily::Ode3 => params.a2 * cl(t) + params.a3,
        };
        let integral = gauss(t0, t1, |s| q(s) * (-pint(s)).exp());
        let prev = *u.last().unwrap();
        u.push(pint(t1).exp() * (prev + integral));
    }
    u
}

pub fn ode_params_of(family: ProblemFamily, scalars: &std::collections::BTreeMap<String, f64>) -> OdeParams {
    let a = |k: &str| scalars[k];
    match family.id() {
        1 | 2 => OdeParams::ode1(a("a1"), a("a2")),
        3 | 4 => OdeParams::ode2(a("a1"), a("a2")),
        5 | 6 => OdeParams::ode3(a("a1"), a("a2"), a("a3")),
        _ => OdeParams::new_ode(a("a1"), a("a2"), a("b")),
    }
}

/// `count` random (operator, source) draws from the forward ODE families.
pub fn random_ode_cases(count: usize, seed: u64) -> Vec<(OdeParams, f64, Vec<f64>)> {
    let families = [1u8, 3, 5];
    (0..count)
        .map(|i| {
            let family = ProblemFamily::new(families[i % 3]).unwrap();
            let mut rng = SeedTree::new(seed).derive("ode-oracle", i as u64).rng();
            let spec = sample_operator(family, &mut rng).unwrap();
            let source = sample_source(&spec, &mut rng).unwrap();
            assert_eq!(source.len(), ODE_POINTS + 1);
            (ode_params_of(family, &spec.scalars), source[0], source[1..].to_vec())
        })
        .collect()
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Max error of the Poisson solve for `c = sin(pi x)` against `-sin(pi x) / pi^2`.
pub fn poisson_sine_error(n: usize) -> f64 {
    let pi = std::f64::consts::PI;
    let grid = Grid1D::unit(n).unwrap();
    let xs = grid.points();
    let c: Vec<f64> = xs.iter().map(|x| (pi * x).sin()).collect();
    let u = solve_poisson(&c, &grid, 0.0, 0.0).unwrap();
    let exact: Vec<f64> = xs.iter().map(|x| -(pi * x).sin() / (pi * pi)).collect();
    max_abs_diff(&u, &exact)
}

/// Largest interior residual of `-lambda a u'' + k u^3 - c`, relative to the
/// largest term, for a constructed nonlinear reaction-diffusion pair.
pub fn nonlinear_rd_residual(seed: u64) -> f64 {
    let n = 101;
    let grid = Grid1D::unit(n).unwrap();
    let xs = grid.points();
    let mut rng = SeedTree::new(seed).derive("nonlinear-rd", 0).rng();
    let u_hat = sample_gp(&xs, &GpSpec::rbf(1.0, 0.5), &mut rng).unwrap();
    let params = BvpParams::nonlinear_rd(0.3, -0.2, 0.7, 1.3);
    let (u, c) = nonlinear_rd_construct(&u_hat, &params, &grid).unwrap();
    assert_eq!((u[0], u[n - 1]), (params.u0, params.u1));
    let h = grid.dx();
    let s = params.lambda * params.a;
    let mut worst: f64 = 0.0;
    for i in 1..n - 1 {
        let diffusion = -s * (u[i + 1] + u[i - 1] - 2.0 * u[i]) / (h * h);
        let reaction = params.k_const * u[i].powi(3);
        let scale = diffusion.abs().max(reaction.abs()).max(c[i].abs()).max(1.0);
        worst = worst.max((diffusion + reaction - c[i]).abs() / scale);
    }
    worst
}

/// Random periodic MFC problem: zero-mean GP terminal cost, softplus GP density.
pub fn random_mfc_problem(seed: u64, n_x: usize) -> MfcProblem {
    let xs: Vec<f64> = (0..n_x).map(|i| i as f64 / n_x as f64).collect();
    let dx = 1.0 / n_x as f64;
    let mut rng = SeedTree::new(seed).derive("mfc-oracle", n_x as u64).rng();
    let spec = GpSpec::periodic(1.0, 1.0);
    let g = zero_mean(&sample_gp(&xs, &spec, &mut rng).unwrap(), dx, Quadrature::Periodic);
    let rho0 =
        normalize_density(&softplus(&sample_gp(&xs, &spec, &mut rng).unwrap()), dx, Quadrature::Periodic).unwrap();
    MfcProblem::new(g, rho0)
}
