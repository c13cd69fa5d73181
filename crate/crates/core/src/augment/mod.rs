//! Augmentation weight matrices and the surrogate-powered estimator.
//!
//! An augmented estimator has the form `β̂_V − Γ (θ̂_V − θ̂_F)` where the
//! θ̂'s stack the surrogate-model coefficients fit on the validation set and
//! on the full cohort. `Γ` is either a plug-in ratio of weighted moment
//! matrices or the solution of a penalized multi-response regression of the
//! outcome influence rows on the surrogate influence rows.

mod cv;
mod inference;
mod plugin;
mod regularized;

pub use cv::{cv_folds, lambda_grid, lambda_path_cv, lambda_path_cv_with, CvResult, DEFAULT_GRID_LEN, GRID_RATIO};
pub use inference::{
    assemble_spi, asymptotic_variance, normal_quantile, wald_tests, SpiEstimate, WaldRow,
};
pub use plugin::{gamma_plugin, PluginVariant};
pub use regularized::{
    gamma_regularized, gamma_regularized_cv, gamma_regularized_cv_with, gamma_regularized_with, Penalty, RegularizedProblem, SolverOptions,
};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMethod {
    PluginFull,
    PluginValidation,
    Lasso,
    GroupLasso,
    Zero,
}

/// A `p × q` augmentation matrix with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaEstimate {
    pub matrix: Array2<f64>,
    pub method: GammaMethod,
    pub lambda: f64,
    /// Columns with at least one nonzero entry.
    pub active_columns: Vec<usize>,
    pub active_entries: usize,
}

impl GammaEstimate {
    pub fn new(matrix: Array2<f64>, method: GammaMethod, lambda: f64) -> Self {
        let active_columns = matrix
            .columns()
            .into_iter()
            .enumerate()
            .filter(|(_, c)| c.iter().any(|&v| v != 0.0))
            .map(|(j, _)| j)
            .collect();
        let active_entries = matrix.iter().filter(|&&v| v != 0.0).count();
        Self {
            matrix,
            method,
            lambda,
            active_columns,
            active_entries,
        }
    }

    pub fn zero(p: usize, q: usize) -> Self {
        Self::new(Array2::zeros((p, q)), GammaMethod::Zero, 0.0)
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Per-subject weight `(1 − ρ)/ρ²` of the numerator moments and the
/// penalized regression.
#[inline]
pub(crate) fn augmentation_weight(rho: f64) -> f64 {
    (1.0 - rho) / (rho * rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn active_sets_are_counted() {
        let g = GammaEstimate::new(
            array![[0.0, 1.0, 0.0], [0.0, -2.0, 0.5]],
            GammaMethod::Lasso,
            0.1,
        );
        assert_eq!(g.active_columns, vec![1, 2]);
        assert_eq!(g.active_entries, 3);
        let z = GammaEstimate::zero(2, 4);
        assert!(z.matrix.iter().all(|&v| v == 0.0));
        assert_eq!(z.active_entries, 0);
    }
}
