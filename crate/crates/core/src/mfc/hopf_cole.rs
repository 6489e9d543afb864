use super::heat::CnStepper;
use crate::error::{IconError, Result};
use crate::stochastic::Quadrature;

pub const MFC_C_COEF: f64 = 20.0;
pub const MFC_MU: f64 = 0.02;
pub const MFC_NT: usize = 51;
pub const MFC_NX: usize = 100;

const PSI_FLOOR: f64 = 1e-12;
const NEGATIVITY_TOL: f64 = 1e-10;
const RHO0_MASS_TOL: f64 = 1e-9;

/// One mean-field control instance on `[0, 1] x [0, 1)` with `x_i = i / n_x`
/// and `t_j = j / (n_t - 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MfcProblem {
    pub g: Vec<f64>,
    pub rho0: Vec<f64>,
    pub c_coef: f64,
    pub mu: f64,
    pub n_t: usize,
}

impl MfcProblem {
    /// Problem with the default constants and time grid.
    pub fn new(g: Vec<f64>, rho0: Vec<f64>) -> Self {
        Self { g, rho0, c_coef: MFC_C_COEF, mu: MFC_MU, n_t: MFC_NT }
    }

    pub fn with_time_steps(mut self, n_t: usize) -> Self {
        self.n_t = n_t;
        self
    }

    pub fn n_x(&self) -> usize {
        self.g.len()
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.n_x() as f64
    }

    pub fn dt(&self) -> f64 {
        1.0 / (self.n_t - 1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.g.len();
        if n < 3 || self.rho0.len() != n {
            return Err(IconError::Dimension(format!("g has {n} points, rho0 {}", self.rho0.len())));
        }
        if self.n_t < 2 {
            return Err(IconError::InvalidInput("need at least two time levels".into()));
        }
        if !(self.c_coef > 0.0 && self.mu > 0.0) {
            return Err(IconError::InvalidInput("c and mu must be positive".into()));
        }
        if self.g.iter().chain(&self.rho0).any(|v| !v.is_finite()) {
            return Err(IconError::InvalidInput("non-finite MFC data".into()));
        }
        if self.rho0.iter().any(|&r| r < 0.0) {
            return Err(IconError::InvalidInput("negative initial density".into()));
        }
        let mass = Quadrature::Periodic.integrate(&self.rho0, self.dx());
        if (mass - 1.0).abs() > RHO0_MASS_TOL {
            return Err(IconError::InvalidInput(format!("initial density has mass {mass}")));
        }
        Ok(())
    }
}

/// Density and Hopf-Cole factors on the `n_t x n_x` grid, row-major in time.
#[derive(Clone, Debug, PartialEq)]
pub struct MfcSolution {
    pub n_t: usize,
    pub n_x: usize,
    pub rho: Vec<f64>,
    pub psi: Vec<f64>,
    pub psi_hat: Vec<f64>,
    /// Minimum of `psi * psi_hat` before clipping at zero.
    pub min_rho_unclipped: f64,
}

impl MfcSolution {
    pub fn rho_at(&self, t: usize) -> &[f64] {
        &self.rho[t * self.n_x..(t + 1) * self.n_x]
    }

    /// Rows `[from, to)` of the density, flattened.
    pub fn rho_rows(&self, from: usize, to: usize) -> &[f64] {
        &self.rho[from * self.n_x..to * self.n_x]
    }
}

/// Hopf-Cole solve: backward heat flow for `psi` from `exp(-g / (2 mu c))`,
/// forward heat flow for `psi_hat` from `rho0 / psi(0)`, `rho = psi psi_hat`.
pub fn solve_mfc(p: &MfcProblem) -> Result<MfcSolution> {
    p.validate()?;
    let (n_t, n_x) = (p.n_t, p.n_x());
    let stepper = CnStepper::new(n_x, p.mu, p.dt(), p.dx());
    let scale = 2.0 * p.mu * p.c_coef;

    let mut psi = vec![0.0; n_t * n_x];
    for (dst, g) in psi[(n_t - 1) * n_x..].iter_mut().zip(&p.g) {
        *dst = (-g / scale).exp();
    }
    for t in (0..n_t - 1).rev() {
        let next = stepper.step(&psi[(t + 1) * n_x..(t + 2) * n_x])?;
        psi[t * n_x..(t + 1) * n_x].copy_from_slice(&next);
    }
    let psi0 = &psi[..n_x];
    let floor = psi0.iter().copied().fold(f64::INFINITY, f64::min);
    if !(floor >= PSI_FLOOR) || psi.iter().any(|v| !v.is_finite()) {
        return Err(IconError::Conditioning(format!("psi(0, .) reaches {floor:e}; terminal cost too extreme")));
    }

    let mut psi_hat = vec![0.0; n_t * n_x];
    for ((dst, r), s) in psi_hat[..n_x].iter_mut().zip(&p.rho0).zip(psi0) {
        *dst = r / s;
    }
    for t in 1..n_t {
        let next = stepper.step(&psi_hat[(t - 1) * n_x..t * n_x])?;
        psi_hat[t * n_x..(t + 1) * n_x].copy_from_slice(&next);
    }

    let mut rho: Vec<f64> = psi.iter().zip(&psi_hat).map(|(a, b)| a * b).collect();
    // Row 0 is rho0 up to one rounding; store it exactly.
    rho[..n_x].copy_from_slice(&p.rho0);
    let min_rho_unclipped = rho.iter().copied().fold(f64::INFINITY, f64::min);
    if min_rho_unclipped < -NEGATIVITY_TOL {
        return Err(IconError::Conditioning(format!("density undershoots to {min_rho_unclipped:e}")));
    }
    for r in rho.iter_mut() {
        *r = r.max(0.0);
    }
    Ok(MfcSolution { n_t, n_x, rho, psi, psi_hat, min_rho_unclipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::{normalize_density, sample_gp, softplus, zero_mean, GpSpec, SeedTree};

    fn random_problem(seed: u64, n_x: usize) -> MfcProblem {
        let mut rng = SeedTree::new(seed).rng();
        let dx = 1.0 / n_x as f64;
        let xs: Vec<f64> = (0..n_x).map(|i| i as f64 * dx).collect();
        let spec = GpSpec::periodic(1.0, 1.0);
        let g = zero_mean(&sample_gp(&xs, &spec, &mut rng).unwrap(), dx, Quadrature::Periodic);
        let rho0 =
            normalize_density(&softplus(&sample_gp(&xs, &spec, &mut rng).unwrap()), dx, Quadrature::Periodic).unwrap();
        MfcProblem::new(g, rho0)
    }

    #[test]
    fn zero_cost_is_plain_diffusion() {
        let p = random_problem(1, 100);
        let p = MfcProblem { g: vec![0.0; 100], ..p };
        let sol = solve_mfc(&p).unwrap();
        let stepper = CnStepper::new(100, p.mu, p.dt(), p.dx());
        let mut cur = p.rho0.clone();
        for t in 1..p.n_t {
            cur = stepper.step(&cur).unwrap();
            for (a, b) in sol.rho_at(t).iter().zip(&cur) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn uniform_density_with_constant_cost_stays_uniform() {
        let p = MfcProblem::new(vec![0.7; 100], vec![1.0; 100]);
        let sol = solve_mfc(&p).unwrap();
        assert!(sol.rho.iter().all(|r| (r - 1.0).abs() < 1e-12));
    }

    #[test]
    fn mass_positivity_and_factorisation() {
        for seed in 0..5 {
            let p = random_problem(seed, 100);
            let sol = solve_mfc(&p).unwrap();
            assert!(sol.min_rho_unclipped >= -1e-10);
            for t in 0..sol.n_t {
                let m = Quadrature::Periodic.integrate(sol.rho_at(t), p.dx());
                assert!((m - 1.0).abs() < 1e-6, "t={t} mass {m}");
            }
            for i in 0..100 {
                assert!((sol.psi[i] * sol.psi_hat[i] - p.rho0[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn terminal_cost_shift_invariance() {
        let p = random_problem(11, 100);
        let base = solve_mfc(&p).unwrap();
        let shifted = solve_mfc(&MfcProblem { g: p.g.iter().map(|g| g + 1.3).collect(), ..p.clone() }).unwrap();
        let diff = base.rho.iter().zip(&shifted.rho).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn extreme_terminal_cost_is_rejected() {
        let p = MfcProblem::new(vec![40.0; 100], vec![1.0; 100]);
        assert!(matches!(solve_mfc(&p), Err(IconError::Conditioning(_))));
    }

    #[test]
    fn rejects_unnormalised_density() {
        let p = MfcProblem::new(vec![0.0; 100], vec![2.0; 100]);
        assert!(solve_mfc(&p).is_err());
    }
}
