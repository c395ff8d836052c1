//! Model parameters shared by every stage of a solve.

use serde::{Deserialize, Serialize};

use crate::distributions::truncation_level;
use crate::error::{Error, Result};

/// Arrival/service rates, opening horizon and discretisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Mean number of walk-in customers per day.
    pub lambda: f64,
    /// Service rate.
    pub mu: f64,
    /// Closing time `T`.
    pub horizon: f64,
    /// Integration step.
    pub delta: f64,
    /// Poisson mass captured by the truncation level.
    pub trunc_mass: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            mu: 1.0,
            horizon: 5.0,
            delta: 0.01,
            trunc_mass: 0.999,
        }
    }
}

impl ModelParams {
    pub fn new(lambda: f64, mu: f64, horizon: f64) -> Result<Self> {
        let p = Self {
            lambda,
            mu,
            horizon,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_trunc_mass(mut self, c: f64) -> Self {
        self.trunc_mass = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("lambda", self.lambda)?;
        positive("mu", self.mu)?;
        positive("horizon", self.horizon)?;
        positive("delta", self.delta)?;
        if self.delta > self.horizon {
            return Err(Error::InvalidParameter(format!(
                "delta {} exceeds the horizon {}",
                self.delta, self.horizon
            )));
        }
        if !(self.trunc_mass > 0.0 && self.trunc_mass < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "truncation mass must lie in (0, 1), got {}",
                self.trunc_mass
            )));
        }
        Ok(())
    }

    /// Truncation level `K` of the walk-in population.
    pub fn truncation(&self) -> usize {
        truncation_level(self.lambda, self.trunc_mass)
    }
}
