//! Mean-field control with quadratic kinetic cost, diffusion and a terminal
//! cost on the periodic unit interval.
//!
//! The production solver uses the Hopf-Cole factorisation `rho = psi * psi_hat`
//! into a backward and a forward heat equation. [`pdhg_oracle`] solves the same
//! problem as a discretised convex program and is used to cross-check it.

mod heat;
mod hopf_cole;
mod pdhg;

pub use heat::{cn_decay_factor, heat_step_periodic, CnStepper};
pub use hopf_cole::{solve_mfc, MfcProblem, MfcSolution, MFC_C_COEF, MFC_MU, MFC_NT, MFC_NX};
pub use pdhg::{pdhg_oracle, PdhgConfig, PdhgReport};
