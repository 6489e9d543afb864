use crate::error::Result;
use crate::scalar::Scalar;
use crate::solvers::tridiag::solve_cyclic_tridiagonal;

/// Crank-Nicolson stepper for `v_t = mu v_xx` on a uniform periodic grid.
#[derive(Clone, Debug)]
pub struct CnStepper<T> {
    n: usize,
    half_r: T,
    lower: Vec<T>,
    diag: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> CnStepper<T> {
    pub fn new(n: usize, mu: T, dt: T, dx: T) -> Self {
        let half_r = mu * dt / (dx * dx) * T::of(0.5);
        Self {
            n,
            half_r,
            lower: vec![-half_r; n],
            diag: vec![T::one() + T::of(2.0) * half_r; n],
            upper: vec![-half_r; n],
        }
    }

    pub fn step(&self, v: &[T]) -> Result<Vec<T>> {
        let n = self.n;
        assert_eq!(v.len(), n, "CN stepper built for {n} points");
        let two = T::of(2.0);
        let rhs: Vec<T> = (0..n)
            .map(|i| {
                let l = v[(i + n - 1) % n];
                let r = v[(i + 1) % n];
                v[i] + self.half_r * (l - two * v[i] + r)
            })
            .collect();
        solve_cyclic_tridiagonal(&self.lower, &self.diag, &self.upper, -self.half_r, -self.half_r, &rhs)
    }
}

/// One Crank-Nicolson step of the periodic heat equation.
pub fn heat_step_periodic<T: Scalar>(v: &[T], mu: T, dt: T, dx: T) -> Result<Vec<T>> {
    CnStepper::new(v.len(), mu, dt, dx).step(v)
}

/// Per-step amplification of the Fourier mode with wavenumber `k` (cycles per unit length).
pub fn cn_decay_factor(k: f64, mu: f64, dt: f64, dx: f64) -> f64 {
    let symbol = 2.0 * (1.0 - (std::f64::consts::TAU * k * dx).cos()) / (dx * dx);
    let a = 0.5 * mu * dt * symbol;
    (1.0 - a) / (1.0 + a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_are_fixed_points() {
        let v = vec![0.37f64; 100];
        let out = heat_step_periodic(&v, 0.02, 0.02, 0.01).unwrap();
        assert!(out.iter().all(|x| (x - 0.37).abs() < 1e-14));
    }

    #[test]
    fn cosine_mode_decays_at_cn_rate() {
        let n = 100;
        let dx = 1.0 / n as f64;
        let (mu, dt) = (0.02, 0.02);
        let v: Vec<f64> = (0..n).map(|i| (std::f64::consts::TAU * i as f64 * dx).cos()).collect();
        let out = heat_step_periodic(&v, mu, dt, dx).unwrap();
        let f = cn_decay_factor(1.0, mu, dt, dx);
        for (a, b) in out.iter().zip(&v) {
            assert!((a - f * b).abs() < 1e-12);
        }
    }

    #[test]
    fn mass_is_preserved() {
        let n = 64;
        let dx = 1.0 / n as f64;
        let v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i * i) as f64 * 0.1).sin()).collect();
        let stepper = CnStepper::new(n, 0.02, 0.05, dx);
        let mut cur = v.clone();
        let m0: f64 = v.iter().sum::<f64>() * dx;
        for _ in 0..10 {
            cur = stepper.step(&cur).unwrap();
            let m: f64 = cur.iter().sum::<f64>() * dx;
            assert!((m - m0).abs() < 1e-13);
        }
    }
}
