use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sampling::poisson_sample;
use super::sigma::SigmaModel;
use super::WaveConfig;
use crate::error::{Result, SpiError};

/// How per-wave rule values combine into a cumulative inclusion probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InclusionFormula {
    /// `1 − (1−κπ) Π_j (1 − ρ*_j)`: the probability of having been drawn by
    /// the pilot or any wave, each wave sampling unlabeled subjects with `ρ*_j`.
    #[default]
    Exact,
    /// `κπ + (1−κ)π Σ_j Π_{l<j}(1 − ρ*_l) ρ*_j`, which caps every subject at π.
    AsPrinted,
}

/// Everything a multiwave run carries between waves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingState {
    pub n_total: usize,
    pub config: WaveConfig,
    #[serde(default)]
    pub formula: InclusionFormula,
    /// Number of completed adaptive waves.
    pub wave_index: usize,
    /// Newly selected subjects per wave; entry 0 is the pilot.
    pub per_wave_indicators: Vec<Vec<bool>>,
    /// `ρ*_j` for every subject, one vector per adaptive wave.
    pub rule_values: Vec<Vec<f64>>,
    /// `c*_j`; `None` when the wave labeled every eligible subject or fell
    /// back to uniform probabilities.
    pub thresholds: Vec<Option<f64>>,
    pub cumulative_prob: Vec<f64>,
    pub sigma_estimates: Vec<f64>,
    pub sigma_model: Option<SigmaModel>,
}

impl LabelingState {
    /// Draws the uniform pilot at rate κπ.
    pub fn pilot<R: Rng + ?Sized>(
        n_total: usize,
        config: WaveConfig,
        formula: InclusionFormula,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let rate = config.pilot_rate();
        let selected = poisson_sample(&vec![rate; n_total], &vec![true; n_total], rng);
        Ok(Self {
            n_total,
            config,
            formula,
            wave_index: 0,
            per_wave_indicators: vec![selected],
            rule_values: Vec::new(),
            thresholds: Vec::new(),
            cumulative_prob: vec![rate; n_total],
            sigma_estimates: Vec::new(),
            sigma_model: None,
        })
    }

    /// Subjects labeled in any wave so far.
    pub fn labeled(&self) -> Vec<bool> {
        let mut out = vec![false; self.n_total];
        for wave in &self.per_wave_indicators {
            for (o, &r) in out.iter_mut().zip(wave) {
                *o |= r;
            }
        }
        out
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        self.labeled()
            .iter()
            .enumerate()
            .filter_map(|(i, &r)| r.then_some(i))
            .collect()
    }

    /// Cumulative probabilities clamped at `rho_min`, ready for `1/ρ̃` weights.
    pub fn weights_prob(&self) -> Vec<f64> {
        let floor = self.config.rho_min;
        self.cumulative_prob.iter().map(|&r| r.max(floor)).collect()
    }

    /// Appends one wave's rule values and selections and refreshes ρ̃.
    pub fn record_wave(
        &mut self,
        rule_values: Vec<f64>,
        threshold: Option<f64>,
        selected: Vec<bool>,
        sigma_estimates: Vec<f64>,
    ) -> Result<()> {
        let n = self.n_total;
        if rule_values.len() != n || selected.len() != n || sigma_estimates.len() != n {
            return Err(SpiError::DimensionMismatch(format!(
                "wave vectors must have length {n}"
            )));
        }
        let labeled = self.labeled();
        if selected.iter().zip(&labeled).any(|(&s, &l)| s && l) {
            return Err(SpiError::InvalidInput("a labeled subject was selected again".into()));
        }
        self.rule_values.push(rule_values);
        self.thresholds.push(threshold);
        self.per_wave_indicators.push(selected);
        self.sigma_estimates = sigma_estimates;
        self.wave_index += 1;
        self.cumulative_prob = cumulative_inclusion(self, &self.config);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_total;
        let bad = |m: &str| Err(SpiError::InvalidInput(format!("labeling state: {m}")));
        self.config.validate()?;
        if self.per_wave_indicators.len() != self.wave_index + 1
            || self.rule_values.len() != self.wave_index
            || self.thresholds.len() != self.wave_index
        {
            return bad("history lengths disagree with the wave index");
        }
        if self.per_wave_indicators.iter().any(|w| w.len() != n)
            || self.rule_values.iter().any(|w| w.len() != n)
            || self.cumulative_prob.len() != n
        {
            return bad("per-subject vectors have the wrong length");
        }
        if !(self.sigma_estimates.is_empty() || self.sigma_estimates.len() == n) {
            return bad("sigma estimates have the wrong length");
        }
        if self
            .rule_values
            .iter()
            .flatten()
            .chain(&self.cumulative_prob)
            .any(|r| !(0.0..=1.0).contains(r))
        {
            return bad("probabilities outside [0, 1]");
        }
        let mut seen = vec![false; n];
        for wave in &self.per_wave_indicators {
            for (s, &r) in seen.iter_mut().zip(wave) {
                if *s && r {
                    return bad("a subject was selected twice");
                }
                *s |= r;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| SpiError::InvalidInput(format!("cannot serialize state: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let state: Self = serde_json::from_str(text)
            .map_err(|e| SpiError::InvalidInput(format!("cannot parse state: {e}")))?;
        state.validate()?;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| SpiError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SpiError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            SpiError::InvalidInput(m) => SpiError::format(path, m),
            other => other,
        })
    }
}

/// ρ̃ after the recorded waves, unclamped.
pub fn cumulative_inclusion(state: &LabelingState, config: &WaveConfig) -> Vec<f64> {
    let kp = config.pilot_rate();
    (0..state.n_total)
        .map(|i| match state.formula {
            InclusionFormula::Exact => {
                let miss: f64 = state.rule_values.iter().map(|w| 1.0 - w[i]).product();
                1.0 - (1.0 - kp) * miss
            }
            InclusionFormula::AsPrinted => {
                let mut survive = 1.0;
                let mut acc = 0.0;
                for w in &state.rule_values {
                    acc += survive * w[i];
                    survive *= 1.0 - w[i];
                }
                kp + (1.0 - config.pilot_ratio) * config.budget * acc
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn state(formula: InclusionFormula, waves: &[Vec<f64>]) -> LabelingState {
        let cfg = WaveConfig::new(1.0 / 30.0, 0.3, 4).unwrap();
        let n = waves.first().map_or(3, Vec::len);
        let mut st = LabelingState::pilot(n, cfg, formula, &mut stream(0, &[])).unwrap();
        st.per_wave_indicators[0] = vec![false; n];
        for w in waves {
            st.record_wave(w.clone(), Some(1.0), vec![false; n], vec![1.0; n]).unwrap();
        }
        st
    }

    #[test]
    fn pilot_only_is_kappa_pi() {
        for f in [InclusionFormula::Exact, InclusionFormula::AsPrinted] {
            let st = state(f, &[]);
            for r in cumulative_inclusion(&st, &st.config) {
                assert!((r - 0.01).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn as_printed_examples() {
        let st = state(InclusionFormula::AsPrinted, &[vec![1.0; 3]]);
        for r in &st.cumulative_prob {
            assert!((r - 1.0 / 30.0).abs() < 1e-15);
        }
        let st = state(InclusionFormula::AsPrinted, &[vec![0.0; 3], vec![0.0; 3]]);
        for r in &st.cumulative_prob {
            assert!((r - 0.01).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_form_is_a_union_probability() {
        let st = state(InclusionFormula::Exact, &[vec![0.2, 0.0, 1.0], vec![0.5, 0.0, 0.3]]);
        let want = [1.0 - 0.99 * 0.8 * 0.5, 0.01, 1.0];
        for (r, w) in st.cumulative_prob.iter().zip(want) {
            assert!((r - w).abs() < 1e-15);
        }
    }

    #[test]
    fn json_round_trip_and_reselection_guard() {
        let mut st = state(InclusionFormula::Exact, &[vec![0.1, 0.2, 0.3]]);
        st.per_wave_indicators[1] = vec![true, false, false];
        let back = LabelingState::from_json(&st.to_json().unwrap()).unwrap();
        assert_eq!(back, st);
        assert!(st
            .record_wave(vec![0.1; 3], None, vec![true, false, false], vec![1.0; 3])
            .is_err());
    }
}
