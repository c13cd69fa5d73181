//! Adaptive labeling: the truncated optimal rule, per-wave thresholds, the
//! σ model, Poisson sampling and multiwave orchestration.

mod multiwave;
mod rule;
mod sampling;
mod sigma;
mod state;

pub use multiwave::{
    plan_wave, run_multiwave, run_spi_plus_plus, LabelOracle, MultiwaveOptions, MultiwaveOutcome,
    WaveInputs, WavePlan,
};
pub use rule::{bisect_threshold, budget_mean, optimal_rho, solve_budget_threshold, Threshold};
pub use sampling::poisson_sample;
pub use sigma::{
    fit_sigma_model, inverse_softplus, predict_sigma, sigma_features, sigma_from_z, softplus,
    squared_residual_norms, RidgeRegressor, SigmaModel, SigmaRegressor, MIN_SQUARED_RESIDUAL,
};
pub use state::{cumulative_inclusion, InclusionFormula, LabelingState};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiError};

/// Budget split between a uniform pilot and `waves` adaptive rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveConfig {
    /// Expected labeled fraction π.
    pub budget: f64,
    /// Share κ of the budget spent on the pilot.
    pub pilot_ratio: f64,
    pub waves: usize,
    /// Floor applied to inclusion probabilities before weighting.
    pub rho_min: f64,
    pub sigma_floor: f64,
}

impl WaveConfig {
    pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-6;

    /// Default floors: `rho_min = 0.01·κπ`, `sigma_floor = 1e-6`.
    pub fn new(budget: f64, pilot_ratio: f64, waves: usize) -> Result<Self> {
        let cfg = Self {
            budget,
            pilot_ratio,
            waves,
            rho_min: 0.01 * pilot_ratio * budget,
            sigma_floor: Self::DEFAULT_SIGMA_FLOOR,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SpiError::InvalidSchedule(m));
        if !(self.budget > 0.0 && self.budget < 1.0) {
            return bad(format!("budget {} outside (0, 1)", self.budget));
        }
        if !(self.pilot_ratio > 0.0 && self.pilot_ratio <= 1.0) {
            return bad(format!("pilot ratio {} outside (0, 1]", self.pilot_ratio));
        }
        if !(self.rho_min > 0.0 && self.rho_min <= self.pilot_rate() * (1.0 + 1e-12)) {
            return bad(format!("rho_min {} outside (0, κπ]", self.rho_min));
        }
        if !(self.sigma_floor > 0.0 && self.sigma_floor.is_finite()) {
            return bad(format!("sigma floor {} must be positive", self.sigma_floor));
        }
        if self.waves > 0 && self.wave_target() > 1.0 {
            return bad("per-wave target exceeds 1".into());
        }
        Ok(())
    }

    /// κπ, the pilot's uniform rate.
    pub fn pilot_rate(&self) -> f64 {
        self.pilot_ratio * self.budget
    }

    /// π(1−κ)/M, each adaptive wave's expected labeled fraction of the cohort.
    pub fn wave_target(&self) -> f64 {
        if self.waves == 0 {
            0.0
        } else {
            self.budget * (1.0 - self.pilot_ratio) / self.waves as f64
        }
    }

    /// Whether the adaptive waves have anything to spend.
    pub fn has_adaptive_waves(&self) -> bool {
        self.waves > 0 && self.wave_target() > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let c = WaveConfig::new(1.0 / 30.0, 0.3, 4).unwrap();
        assert!((c.pilot_rate() - 0.01).abs() < 1e-15);
        assert!((c.rho_min - 1e-4).abs() < 1e-15);
        assert!((c.wave_target() - 0.7 / 30.0 / 4.0).abs() < 1e-15);
        assert!(WaveConfig::new(1.5, 0.3, 4).is_err());
        assert!(WaveConfig::new(0.1, 0.0, 4).is_err());
        let one = WaveConfig::new(0.1, 1.0, 4).unwrap();
        assert!(!one.has_adaptive_waves());
        let mut c2 = c;
        c2.rho_min = 0.5;
        assert!(c2.validate().is_err());
    }
}
