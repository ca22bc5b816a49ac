//! Residual variant: `h_l = relu(h_{l-1} + tau·W_l h_{l-1})` for the middle layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSpec {
    pub tau: f64,
}

impl ResidualSpec {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArch(format!("residual scale must be finite and >= 0, got {tau}")));
        }
        Ok(Self { tau })
    }

    /// `tau = 1 / (c · L · ln m)`.
    pub fn scaled(depth: usize, width: usize, c: f64) -> Result<Self> {
        let log_m = (width.max(2) as f64).ln();
        Self::new(1.0 / (c * depth as f64 * log_m))
    }

    /// The default constant `c = 4`.
    pub fn default_for(depth: usize, width: usize) -> Self {
        Self::scaled(depth, width, 4.0).expect("positive constant")
    }

    pub fn tau_warning(&self, depth: usize, width: usize) -> Option<String> {
        let product = self.tau * depth as f64 * (width.max(2) as f64).ln();
        (product > 1.0).then(|| format!("residual scale tau·L·ln m = {product:.3} exceeds 1"))
    }
}
