use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Result, SpiError};
use crate::numerics::ensure_finite;

/// Full dataset: covariates and surrogates for every subject, labels on the
/// validation set, and the inclusion probability each subject was sampled with.
#[derive(Debug, Clone)]
pub struct Cohort {
    covariates: Array2<f64>,
    surrogates: Array2<f64>,
    labels: Vec<Option<f64>>,
    selected: Vec<bool>,
    inclusion_prob: Array1<f64>,
    budget: Option<f64>,
}

impl Cohort {
    /// `covariates` must carry the leading intercept column.
    pub fn new(
        covariates: Array2<f64>,
        surrogates: Array2<f64>,
        labels: Vec<Option<f64>>,
        inclusion_prob: Array1<f64>,
        rho_min: f64,
        budget: Option<f64>,
    ) -> Result<Self> {
        let n = covariates.nrows();
        if surrogates.nrows() != n || labels.len() != n || inclusion_prob.len() != n {
            return Err(SpiError::DimensionMismatch(format!(
                "cohort of {} subjects with {} surrogate rows, {} labels, {} probabilities",
                n,
                surrogates.nrows(),
                labels.len(),
                inclusion_prob.len()
            )));
        }
        ensure_finite(covariates.iter(), "covariates")?;
        ensure_finite(surrogates.iter(), "surrogates")?;
        if labels.iter().flatten().any(|y| !y.is_finite()) {
            return Err(SpiError::InvalidInput("labels contain non-finite values".into()));
        }
        if !(rho_min > 0.0) {
            return Err(SpiError::InvalidInput("rho_min must be positive".into()));
        }
        if let Some(bad) = inclusion_prob
            .iter()
            .position(|&r| !(r >= rho_min && r <= 1.0))
        {
            return Err(SpiError::InvalidInput(format!(
                "inclusion probability {} of subject {} is outside [{}, 1]",
                inclusion_prob[bad], bad, rho_min
            )));
        }
        if let Some(pi) = budget {
            let mean = inclusion_prob.mean().unwrap_or(0.0);
            if mean > pi + 1e-9 {
                return Err(SpiError::InvalidInput(format!(
                    "mean inclusion probability {mean} exceeds budget {pi}"
                )));
            }
        }
        let selected = labels.iter().map(Option::is_some).collect();
        Ok(Self {
            covariates,
            surrogates,
            labels,
            selected,
            inclusion_prob,
            budget,
        })
    }

    pub fn n_total(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn n_surrogates(&self) -> usize {
        self.surrogates.ncols()
    }

    pub fn n_labeled(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    pub fn covariates(&self) -> ArrayView2<'_, f64> {
        self.covariates.view()
    }

    pub fn surrogates(&self) -> ArrayView2<'_, f64> {
        self.surrogates.view()
    }

    pub fn surrogate(&self, k: usize) -> ArrayView1<'_, f64> {
        self.surrogates.column(k)
    }

    pub fn labels(&self) -> &[Option<f64>] {
        &self.labels
    }

    pub fn selected(&self) -> &[bool] {
        &self.selected
    }

    pub fn inclusion_prob(&self) -> ArrayView1<'_, f64> {
        self.inclusion_prob.view()
    }

    pub fn budget(&self) -> Option<f64> {
        self.budget
    }

    pub fn validation_indices(&self) -> Vec<usize> {
        (0..self.n_total()).filter(|&i| self.selected[i]).collect()
    }

    pub fn validation_design(&self) -> Array2<f64> {
        self.covariates.select(Axis(0), &self.validation_indices())
    }

    pub fn validation_labels(&self) -> Array1<f64> {
        self.labels.iter().flatten().copied().collect()
    }

    pub fn validation_surrogates(&self) -> Array2<f64> {
        self.surrogates.select(Axis(0), &self.validation_indices())
    }

    pub fn validation_prob(&self) -> Array1<f64> {
        self.validation_indices()
            .into_iter()
            .map(|i| self.inclusion_prob[i])
            .collect()
    }

    /// Inverse-probability weights `1/ρ_i` on the validation set.
    pub fn validation_weights(&self) -> Array1<f64> {
        self.validation_prob().mapv(|r| 1.0 / r)
    }

    /// Realized sampling fraction `n/N`.
    pub fn sampling_fraction(&self) -> f64 {
        self.n_labeled() as f64 / self.n_total() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn base() -> (Array2<f64>, Array2<f64>) {
        (
            array![[1.0, 0.1], [1.0, -0.4], [1.0, 2.0]],
            array![[1.0], [0.0], [1.0]],
        )
    }

    #[test]
    fn selection_follows_labels() {
        let (x, s) = base();
        let c = Cohort::new(
            x,
            s,
            vec![Some(1.0), None, Some(0.0)],
            array![0.5, 0.5, 0.5],
            0.01,
            Some(0.5),
        )
        .unwrap();
        assert_eq!(c.selected(), &[true, false, true]);
        assert_eq!(c.validation_indices(), vec![0, 2]);
        assert_eq!(c.validation_labels(), array![1.0, 0.0]);
        assert_eq!(c.validation_weights(), array![2.0, 2.0]);
    }

    #[test]
    fn positivity_and_budget_enforced() {
        let (x, s) = base();
        assert!(Cohort::new(
            x.clone(),
            s.clone(),
            vec![None; 3],
            array![0.5, 0.001, 0.5],
            0.01,
            None
        )
        .is_err());
        assert!(Cohort::new(x, s, vec![None; 3], array![0.6, 0.6, 0.6], 0.01, Some(0.5)).is_err());
    }
}
