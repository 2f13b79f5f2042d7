//! Geometric noise schedules.
//!
//! Levels are indexed 1..=L with `sigma_1` the largest noise scale and
//! `sigma_L` the smallest; annealing visits them in that order.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Strictly descending positive noise scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Wraps an explicit list, validating positivity and strict descent.
    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::Config("schedule needs at least one level".into()));
        }
        if sigmas.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Config(format!(
                "noise scales must be positive and finite, got {sigmas:?}"
            )));
        }
        if sigmas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(format!(
                "noise scales must be strictly descending, got {sigmas:?}"
            )));
        }
        Ok(NoiseSchedule { sigmas })
    }

    pub fn levels(&self) -> usize {
        self.sigmas.len()
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// 1-based accessor: `sigma(1)` is the largest scale.
    pub fn sigma(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.sigmas.len() {
            return Err(Error::Index(format!(
                "level {t} out of range 1..={}",
                self.sigmas.len()
            )));
        }
        Ok(self.sigmas[t - 1])
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[0]
    }

    pub fn sigma_min(&self) -> f64 {
        *self.sigmas.last().unwrap()
    }

    /// Langevin step size `alpha_t = a * sigma_t^2 / sigma_L^2`.
    pub fn step_size(&self, t: usize, a: f64) -> Result<f64> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::Config(format!(
                "step coefficient must be positive and finite, got {a}"
            )));
        }
        let s = self.sigma(t)?;
        let s_l = self.sigma_min();
        Ok(a * (s * s) / (s_l * s_l))
    }
}

/// Geometric schedule: `sigma_i = sigma_max * r^(i-1)` with
/// `r = (sigma_min / sigma_max)^(1 / (L - 1))`.
pub fn make_schedule(sigma_max: f64, sigma_min: f64, levels: usize) -> Result<NoiseSchedule> {
    if levels < 2 {
        return Err(Error::Config(format!(
            "a geometric schedule needs at least 2 levels, got {levels}"
        )));
    }
    if !(sigma_max.is_finite() && sigma_min.is_finite()) || sigma_min <= 0.0 {
        return Err(Error::Config(format!(
            "noise bounds must be finite and positive, got ({sigma_max}, {sigma_min})"
        )));
    }
    if sigma_max <= sigma_min {
        return Err(Error::Config(format!(
            "sigma_max must exceed sigma_min, got ({sigma_max}, {sigma_min})"
        )));
    }
    let r = (sigma_min / sigma_max).powf(1.0 / (levels - 1) as f64);
    let sigmas: Vec<f64> = (0..levels)
        .map(|i| sigma_max * r.powi(i as i32))
        .collect();
    NoiseSchedule::from_sigmas(sigmas)
}
