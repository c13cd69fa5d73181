use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::augment::GammaEstimate;
use crate::error::{Result, SpiError};
use crate::numerics::{cholesky_jittered, symmetrize};

/// `log(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `log(e^a − 1)` for `a > 0`, the inverse of [`softplus`].
#[inline]
pub fn inverse_softplus(a: f64) -> f64 {
    debug_assert!(a > 0.0);
    a + (-(-a).exp_m1()).ln()
}

/// Smallest squared residual norm fed to [`inverse_softplus`].
pub const MIN_SQUARED_RESIDUAL: f64 = 1e-12;

/// Fitted model for `z = log(exp(σ²) − 1)` as a function of `(x, s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaModel {
    /// `ẑ = featuresᵀ coefficients`; the features already carry the intercept.
    Linear { coefficients: Vec<f64> },
}

impl SigmaModel {
    pub fn predict_z(&self, features: ArrayView1<f64>) -> f64 {
        match self {
            SigmaModel::Linear { coefficients } => features
                .iter()
                .zip(coefficients)
                .map(|(f, c)| f * c)
                .sum(),
        }
    }
}

/// A regression method for the σ model.
pub trait SigmaRegressor: Send + Sync {
    fn fit(&self, features: ArrayView2<f64>, target: ArrayView1<f64>) -> Result<SigmaModel>;
}

/// Ridge regression leaving column 0 (the intercept) unpenalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeRegressor {
    pub penalty: f64,
}

impl Default for RidgeRegressor {
    fn default() -> Self {
        Self { penalty: 1e-4 }
    }
}

impl SigmaRegressor for RidgeRegressor {
    fn fit(&self, features: ArrayView2<f64>, target: ArrayView1<f64>) -> Result<SigmaModel> {
        if features.nrows() != target.len() {
            return Err(SpiError::DimensionMismatch(format!(
                "{} feature rows for {} targets",
                features.nrows(),
                target.len()
            )));
        }
        if features.nrows() == 0 {
            return Err(SpiError::InvalidInput("no rows for the sigma model".into()));
        }
        let mut gram = features.t().dot(&features);
        for j in 1..gram.nrows() {
            gram[[j, j]] += self.penalty;
        }
        symmetrize(&mut gram);
        let rhs = features.t().dot(&target);
        let (chol, _) = cholesky_jittered(gram.view())?;
        Ok(SigmaModel::Linear {
            coefficients: chol.solve_vec(rhs.view()).to_vec(),
        })
    }
}

/// Concatenates `(x, s)` row-wise.
pub fn sigma_features(design: ArrayView2<f64>, surrogates: ArrayView2<f64>) -> Array2<f64> {
    let n = design.nrows();
    let p = design.ncols();
    let mut f = Array2::<f64>::zeros((n, p + surrogates.ncols()));
    f.slice_mut(s![.., ..p]).assign(&design);
    f.slice_mut(s![.., p..]).assign(&surrogates);
    f
}

/// `‖ψ_i − Γ η_i‖²` per row.
pub fn squared_residual_norms(
    psi: ArrayView2<f64>,
    eta: ArrayView2<f64>,
    gamma: &GammaEstimate,
) -> Result<Array1<f64>> {
    if psi.nrows() != eta.nrows() || gamma.rows() != psi.ncols() || gamma.cols() != eta.ncols() {
        return Err(SpiError::DimensionMismatch(format!(
            "psi {:?}, eta {:?}, gamma {}x{}",
            psi.dim(),
            eta.dim(),
            gamma.rows(),
            gamma.cols()
        )));
    }
    let resid = &psi - &eta.dot(&gamma.matrix.t());
    Ok(resid.rows().into_iter().map(|r| r.dot(&r)).collect())
}

/// Fits the σ model on validation rows: regress `z = log(exp(‖ψ − Γη‖²) − 1)`
/// on `features`. Squared norms are floored at [`MIN_SQUARED_RESIDUAL`].
pub fn fit_sigma_model(
    features: ArrayView2<f64>,
    psi: ArrayView2<f64>,
    eta: ArrayView2<f64>,
    gamma: &GammaEstimate,
    regressor: &dyn SigmaRegressor,
) -> Result<SigmaModel> {
    let sq = squared_residual_norms(psi, eta, gamma)?;
    let z = sq.mapv(|a| inverse_softplus(a.max(MIN_SQUARED_RESIDUAL)));
    regressor.fit(features, z.view())
}

/// `max(sqrt(softplus(ẑ)), floor)`.
pub fn predict_sigma(model: &SigmaModel, features: ArrayView1<f64>, sigma_floor: f64) -> f64 {
    sigma_from_z(model.predict_z(features), sigma_floor)
}

#[inline]
pub fn sigma_from_z(z: f64, sigma_floor: f64) -> f64 {
    softplus(z).sqrt().max(sigma_floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softplus_pair_inverts() {
        let mut a = 1e-6;
        while a <= 30.0 {
            let back = softplus(inverse_softplus(a));
            assert!((back - a).abs() <= 1e-12, "a = {a}: {back}");
            a *= 1.37;
        }
        // large arguments stay finite
        assert!((inverse_softplus(800.0) - 800.0).abs() < 1e-12);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn sigma_predictions() {
        assert!((sigma_from_z(0.0, 1e-6) - 2f64.ln().sqrt()).abs() < 1e-15);
        assert!((sigma_from_z(0.0, 1e-6) - 0.8326).abs() < 1e-4);
        assert_eq!(sigma_from_z(-1e4, 1e-6), 1e-6);
        assert!((sigma_from_z(5.0, 1e-6) - 2.2375).abs() < 1e-4);
    }

    #[test]
    fn ridge_leaves_intercept_free() {
        let f = array![[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]];
        let z = array![3.0, 3.0, 3.0, 3.0];
        let m = RidgeRegressor::default().fit(f.view(), z.view()).unwrap();
        let SigmaModel::Linear { coefficients } = m;
        assert!((coefficients[0] - 3.0).abs() < 1e-10);
        assert!(coefficients[1].abs() < 1e-10);
    }
}
