//! Seeded sampling: uniform parameters, Gaussian-process draws, and the
//! softplus / density-normalisation / zero-mean transforms used to build
//! parameter functions.

use crate::error::{IconError, Result};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// The RNG every sampler in the crate consumes.
pub type IconRng = ChaCha8Rng;

/// Hierarchical seed: a root seed plus a path of `(label, index)` steps.
///
/// Each path hashes to an independent ChaCha stream, so generation can be
/// split across threads without changing any draw.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedTree {
    root: u64,
    path: Vec<(String, u64)>,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root, path: Vec::new() }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn path(&self) -> &[(String, u64)] {
        &self.path
    }

    pub fn derive(&self, label: &str, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push((label.to_owned(), index));
        Self { root: self.root, path }
    }

    pub fn seed_bytes(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"icon-seed-tree/v1");
        h.update(self.root.to_le_bytes());
        for (label, index) in &self.path {
            h.update((label.len() as u32).to_le_bytes());
            h.update(label.as_bytes());
            h.update(index.to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn rng(&self) -> IconRng {
        IconRng::from_seed(self.seed_bytes())
    }
}

/// Uniform draw on `[lo, hi]`.
pub fn sample_uniform<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> Result<f64> {
    if !(lo <= hi) {
        return Err(IconError::InvalidRange { lo, hi });
    }
    if lo == hi {
        return Ok(lo);
    }
    let u: f64 = rng.random();
    Ok((lo + (hi - lo) * u).clamp(lo, hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    /// Squared-exponential kernel on the line.
    Rbf,
    /// Squared-exponential kernel on the unit circle embedding of `x`.
    Periodic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpSpec {
    pub kind: KernelKind,
    pub sigma2: f64,
    pub length_scale: f64,
    /// Initial diagonal jitter; escalated ten-fold on factorisation failure.
    pub jitter: f64,
}

impl GpSpec {
    pub fn rbf(sigma2: f64, length_scale: f64) -> Self {
        Self { kind: KernelKind::Rbf, sigma2, length_scale, jitter: 1e-8 * sigma2 }
    }

    pub fn periodic(sigma2: f64, length_scale: f64) -> Self {
        Self { kind: KernelKind::Periodic, sigma2, length_scale, jitter: 1e-8 * sigma2 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.length_scale > 0.0 && self.jitter >= 0.0) {
            return Err(IconError::InvalidInput(format!("bad GP spec {self:?}")));
        }
        Ok(())
    }

    pub fn kernel(&self, x: f64, y: f64) -> f64 {
        let two_l2 = 2.0 * self.length_scale * self.length_scale;
        let d2 = match self.kind {
            KernelKind::Rbf => (x - y) * (x - y),
            KernelKind::Periodic => {
                let tau = std::f64::consts::TAU;
                let ds = (tau * x).sin() - (tau * y).sin();
                let dc = (tau * x).cos() - (tau * y).cos();
                ds * ds + dc * dc
            }
        };
        self.sigma2 * (-d2 / two_l2).exp()
    }
}

/// Dense covariance matrix of `spec` on the points `xs`.
pub fn gp_covariance(xs: &[f64], spec: &GpSpec) -> DMatrix<f64> {
    let n = xs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = spec.kernel(xs[i], xs[i]);
        for j in 0..i {
            let v = spec.kernel(xs[i], xs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

const JITTER_ESCALATIONS: usize = 3;

/// Lower Cholesky factor of the jittered covariance.
pub fn gp_factor(xs: &[f64], spec: &GpSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if xs.is_empty() || xs.iter().any(|x| !x.is_finite()) {
        return Err(IconError::InvalidInput("GP grid must be nonempty and finite".into()));
    }
    let k = gp_covariance(xs, spec);
    let mut jitter = spec.jitter;
    for _ in 0..=JITTER_ESCALATIONS {
        let mut kj = k.clone();
        for i in 0..xs.len() {
            kj[(i, i)] += jitter;
        }
        if let Some(ch) = kj.cholesky() {
            return Ok(ch.l());
        }
        jitter *= 10.0;
    }
    Err(IconError::Conditioning(format!("covariance not factorisable with jitter up to {:e}", jitter / 10.0)))
}

/// One zero-mean draw of the process on `xs`.
pub fn sample_gp<R: Rng + ?Sized>(xs: &[f64], spec: &GpSpec, rng: &mut R) -> Result<Vec<f64>> {
    let l = gp_factor(xs, spec)?;
    Ok(draw_with_factor(&l, rng))
}

/// Draw using a precomputed factor from [`gp_factor`].
pub fn draw_with_factor<R: Rng + ?Sized>(l: &DMatrix<f64>, rng: &mut R) -> Vec<f64> {
    let z = DVector::from_iterator(l.nrows(), (0..l.nrows()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    (l * z).iter().copied().collect()
}

pub fn softplus_scalar<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

pub fn softplus<T: Scalar>(v: &[T]) -> Vec<T> {
    v.iter().map(|&x| softplus_scalar(x)).collect()
}

/// Integration rule on a uniform grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrature {
    /// Grid includes both endpoints; domain length `(n-1) dx`.
    Trapezoid,
    /// Periodic grid without the duplicated endpoint; domain length `n dx`.
    Periodic,
}

impl Quadrature {
    pub fn integrate<T: Scalar>(self, v: &[T], dx: T) -> T {
        match self {
            Quadrature::Trapezoid => {
                if v.len() < 2 {
                    return T::zero();
                }
                let inner: T = v[1..v.len() - 1].iter().copied().sum();
                dx * (inner + (v[0] + v[v.len() - 1]) * T::of(0.5))
            }
            Quadrature::Periodic => dx * v.iter().copied().sum(),
        }
    }

    pub fn length<T: Scalar>(self, n: usize, dx: T) -> T {
        match self {
            Quadrature::Trapezoid => dx * T::of(n.saturating_sub(1) as f64),
            Quadrature::Periodic => dx * T::of(n as f64),
        }
    }
}

/// Rescale a nonnegative function to unit integral.
pub fn normalize_density<T: Scalar>(v: &[T], dx: T, rule: Quadrature) -> Result<Vec<T>> {
    let total = rule.integrate(v, dx);
    if !(total > T::zero()) || !total.is_finite() {
        return Err(IconError::DegenerateDensity(total.f64()));
    }
    Ok(v.iter().map(|&x| x / total).collect())
}

/// Subtract the domain average so the integral vanishes.
pub fn zero_mean<T: Scalar>(v: &[T], dx: T, rule: Quadrature) -> Vec<T> {
    let len = rule.length(v.len(), dx);
    if len <= T::zero() {
        return v.to_vec();
    }
    let mean = rule.integrate(v, dx) / len;
    v.iter().map(|&x| x - mean).collect()
}
