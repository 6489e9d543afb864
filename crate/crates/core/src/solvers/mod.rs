//! Ground-truth solvers for the ODE, damped-oscillator and two-point
//! boundary-value families.

mod bvp;
mod grid;
mod ode;
pub mod tridiag;

pub use bvp::{
    nonlinear_rd_construct, nonlinear_rd_source, second_derivative, solve_linear_rd, solve_poisson, BvpFamily,
    BvpParams, LINEAR_RD_LAMBDA, NONLINEAR_RD_LAMBDA,
};
pub use grid::Grid1D;
pub use ode::{
    oscillator, solve_ode_forward, solve_ode_forward_with_substeps, OdeFamily, OdeParams, OscParams, DEFAULT_SUBSTEPS,
};
