use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform periodic grid `x_j = j * domain_length / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    n: usize,
    domain_length: f64,
}

impl Grid1D {
    pub fn new(n: usize, domain_length: f64) -> Result<Self> {
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Size(format!(
                "grid size {n} must be a power of two and at least 4"
            )));
        }
        if !(domain_length > 0.0 && domain_length.is_finite()) {
            return Err(Error::config(
                "domain_length",
                format!("must be positive and finite, got {domain_length}"),
            ));
        }
        Ok(Self { n, domain_length })
    }

    /// Unit-length grid, the Burgers setting.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(n, 1.0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    pub fn spacing(&self) -> f64 {
        self.domain_length / self.n as f64
    }

    pub fn point(&self, j: usize) -> f64 {
        j as f64 * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.point(j)).collect()
    }
}
