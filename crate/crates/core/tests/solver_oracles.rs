mod common;

use common::{max_abs_diff, nonlinear_rd_residual, ode_closed_form, poisson_sine_error, random_ode_cases, rel_l2};
use icon_core::dataset::ODE_POINTS;
use icon_core::solvers::{
    oscillator, solve_linear_rd, solve_ode_forward, solve_ode_forward_with_substeps, solve_poisson, BvpParams, Grid1D,
    OdeParams, OscParams,
};

#[test]
fn rk4_matches_integrating_factor_on_random_operators() {
    let grid = Grid1D::unit(ODE_POINTS).unwrap();
    for (i, (params, u0, c)) in random_ode_cases(100, 2024).iter().enumerate() {
        let rk = solve_ode_forward(params, *u0, c, &grid).unwrap();
        let exact = ode_closed_form(params, *u0, c, &grid);
        let err = rel_l2(&rk, &exact);
        assert!(err < 1e-6, "case {i} ({:?}): {err:e}", params.family);
    }
}

#[test]
fn new_equation_matches_closed_form() {
    let grid = Grid1D::unit(ODE_POINTS).unwrap();
    let c: Vec<f64> = grid.points().iter().map(|t| (3.0 * t).sin()).collect();
    let params = OdeParams::new_ode(0.8, -0.4, 0.25);
    let rk = solve_ode_forward(&params, 0.3, &c, &grid).unwrap();
    assert!(rel_l2(&rk, &ode_closed_form(&params, 0.3, &c, &grid)) < 1e-9);
}

#[test]
fn rk4_error_shrinks_at_fourth_order() {
    let grid = Grid1D::unit(11).unwrap();
    let c: Vec<f64> = grid.points().iter().map(|t| (4.0 * t).cos()).collect();
    let params = OdeParams::ode2(1.5, 0.7);
    let exact = ode_closed_form(&params, 0.5, &c, &grid);
    let err = |k| max_abs_diff(&solve_ode_forward_with_substeps(&params, 0.5, &c, &grid, k).unwrap(), &exact);
    let ratio = err(1) / err(2);
    assert!((13.0..19.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn poisson_is_exact_on_quadratics() {
    let grid = Grid1D::unit(101).unwrap();
    let u = solve_poisson(&vec![2.0; 101], &grid, 0.0, 0.0).unwrap();
    let exact: Vec<f64> = grid.points().iter().map(|x| x * x - x).collect();
    assert!(max_abs_diff(&u, &exact) < 1e-10);
}

#[test]
fn poisson_converges_at_second_order() {
    for n in [21, 41, 81] {
        let ratio = poisson_sine_error(n) / poisson_sine_error(2 * n - 1);
        assert!((3.5..=4.5).contains(&ratio), "n {n}: ratio {ratio}");
    }
}

#[test]
fn linear_rd_with_constant_coefficient_matches_closed_form() {
    // -lambda a u'' + k u = c with constant k has a cosh/sinh solution.
    let grid = Grid1D::unit(401).unwrap();
    let params = BvpParams::linear_rd(0.2, -0.1, 1.0, 1.5);
    let k = 2.0;
    let s = params.lambda * params.a;
    let w = (k / s).sqrt();
    let part = params.c_const / k;
    let (a, b) = (params.u0 - part, params.u1 - part);
    let exact: Vec<f64> =
        grid.points().iter().map(|&x| part + (a * (w * (1.0 - x)).sinh() + b * (w * x).sinh()) / w.sinh()).collect();
    let u = solve_linear_rd(&vec![k; 401], &params, &grid).unwrap();
    assert!(max_abs_diff(&u, &exact) < 1e-5);
}

#[test]
fn nonlinear_rd_pairs_are_exact_discrete_solutions() {
    for seed in 0..10 {
        let r = nonlinear_rd_residual(seed);
        assert!(r < 1e-12, "seed {seed}: {r:e}");
    }
}

#[test]
fn oscillator_matches_formula() {
    let ts: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
    let p = OscParams { amplitude: 1.2, period: 0.15, phase: 0.4, damping: 1.5 };
    let u = oscillator(&p, &ts);
    for (t, v) in ts.iter().zip(&u) {
        let want = 1.2 * (std::f64::consts::TAU * t / 0.15 + 0.4).sin() * (-1.5 * t).exp();
        assert!((v - want).abs() < 1e-14);
    }
}
