use crate::error::{IconError, Result};
use serde::{Deserialize, Serialize};

/// Equidistant grid including both endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    n: usize,
    lo: f64,
    hi: f64,
}

impl Grid1D {
    pub fn new(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if n < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(IconError::InvalidInput(format!("grid n={n} on [{lo}, {hi}]")));
        }
        Ok(Self { n, lo, hi })
    }

    /// `n` points on `[0, 1]`.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(n, 0.0, 1.0)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i == self.n - 1 {
            self.hi
        } else {
            self.lo + i as f64 * self.dx()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }
}
