use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use libm::erfc;

use super::GammaEstimate;
use crate::error::{Result, SpiError};
use crate::glm::FitResult;
use crate::numerics::symmetrize;

/// Final coefficients with their estimated covariance and Wald statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpiEstimate {
    pub coefficients: Array1<f64>,
    pub covariance: Array2<f64>,
    pub std_errors: Array1<f64>,
    pub z_stats: Array1<f64>,
    pub p_values: Array1<f64>,
    /// Realized `n/N`.
    pub sampling_fraction: f64,
    pub method_label: String,
}

impl SpiEstimate {
    pub fn new(
        coefficients: Array1<f64>,
        mut covariance: Array2<f64>,
        sampling_fraction: f64,
        method_label: impl Into<String>,
    ) -> Result<Self> {
        let p = coefficients.len();
        if covariance.dim() != (p, p) {
            return Err(SpiError::DimensionMismatch(format!(
                "{} coefficients with a {:?} covariance",
                p,
                covariance.dim()
            )));
        }
        symmetrize(&mut covariance);
        let std_errors = covariance.diag().mapv(|v| v.max(0.0).sqrt());
        let z_stats = &coefficients / &std_errors;
        let p_values = z_stats.mapv(two_sided_p);
        Ok(Self {
            coefficients,
            covariance,
            std_errors,
            z_stats,
            p_values,
            sampling_fraction,
            method_label: method_label.into(),
        })
    }
}

fn two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Standard normal quantile, polished with Newton steps on the erfc-based CDF
/// so the critical value is accurate to rounding.
pub fn normal_quantile(prob: f64) -> f64 {
    let mut x = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(prob);
    if !x.is_finite() {
        return x;
    }
    for _ in 0..3 {
        let cdf = 0.5 * erfc(-x / std::f64::consts::SQRT_2);
        let dens = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if dens == 0.0 {
            break;
        }
        x -= (cdf - prob) / dens;
    }
    x
}

/// `β̂_V − Γ (θ̂_V − θ̂_F)` with the θ's stacked in surrogate order.
pub fn assemble_spi(
    beta_v: &FitResult,
    theta_v: &[FitResult],
    theta_f: &[FitResult],
    gamma: &GammaEstimate,
) -> Result<Array1<f64>> {
    let p = beta_v.n_params();
    if theta_v.len() != theta_f.len() {
        return Err(SpiError::DimensionMismatch(format!(
            "{} validation surrogate fits and {} full-data fits",
            theta_v.len(),
            theta_f.len()
        )));
    }
    let diff: Vec<f64> = theta_v
        .iter()
        .zip(theta_f)
        .map(|(v, f)| {
            if v.n_params() != f.n_params() {
                Err(SpiError::DimensionMismatch(
                    "surrogate fits disagree on parameter count".into(),
                ))
            } else {
                Ok((&v.coefficients - &f.coefficients).to_vec())
            }
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    if gamma.rows() != p || gamma.cols() != diff.len() {
        return Err(SpiError::DimensionMismatch(format!(
            "gamma is {}x{}, expected {}x{}",
            gamma.rows(),
            gamma.cols(),
            p,
            diff.len()
        )));
    }
    if gamma.active_entries == 0 {
        return Ok(beta_v.coefficients.clone());
    }
    Ok(&beta_v.coefficients - &gamma.matrix.dot(&Array1::from(diff)))
}

/// Estimator covariance `(1/N²) Σ_i ψ̃_i ψ̃_iᵀ` with
/// `ψ̃_i = R_i ψ_i/ρ_i + (ρ_i − R_i)/ρ_i · Γ η_i`.
///
/// Rows of `psi_all` for unselected subjects are ignored.
pub fn asymptotic_variance(
    psi_all: ArrayView2<f64>,
    eta_all: ArrayView2<f64>,
    gamma: &GammaEstimate,
    inclusion_prob: ArrayView1<f64>,
    selected: &[bool],
) -> Result<Array2<f64>> {
    let n = psi_all.nrows();
    let p = psi_all.ncols();
    if eta_all.nrows() != n || inclusion_prob.len() != n || selected.len() != n {
        return Err(SpiError::DimensionMismatch(format!(
            "psi has {} rows, eta {}, inclusion_prob {}, selected {}",
            n,
            eta_all.nrows(),
            inclusion_prob.len(),
            selected.len()
        )));
    }
    if gamma.rows() != p || gamma.cols() != eta_all.ncols() {
        return Err(SpiError::DimensionMismatch(format!(
            "gamma is {}x{}, psi has {} columns and eta {}",
            gamma.rows(),
            gamma.cols(),
            p,
            eta_all.ncols()
        )));
    }
    let use_gamma = gamma.active_entries > 0;
    let projected = if use_gamma {
        Some(eta_all.dot(&gamma.matrix.t()))
    } else {
        None
    };
    let mut acc = Array2::<f64>::zeros((p, p));
    let mut tilde = Array1::<f64>::zeros(p);
    for i in 0..n {
        let rho = inclusion_prob[i];
        let r = if selected[i] { 1.0 } else { 0.0 };
        tilde.fill(0.0);
        if selected[i] {
            tilde.scaled_add(1.0 / rho, &psi_all.row(i));
        }
        if let Some(ge) = &projected {
            tilde.scaled_add((rho - r) / rho, &ge.row(i));
        }
        for a in 0..p {
            let ta = tilde[a];
            if ta == 0.0 {
                continue;
            }
            for b in a..p {
                acc[[a, b]] += ta * tilde[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            acc[[a, b]] = acc[[b, a]];
        }
    }
    Ok(acc / (n as f64 * n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldRow {
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// Two-sided z-tests at `level`: reject iff `|z|` exceeds the `1 − level/2`
/// standard normal quantile.
pub fn wald_tests(estimate: &SpiEstimate, level: f64) -> Vec<WaldRow> {
    let crit = normal_quantile(1.0 - level / 2.0);
    (0..estimate.coefficients.len())
        .map(|j| {
            let z = estimate.z_stats[j];
            WaldRow {
                estimate: estimate.coefficients[j],
                std_error: estimate.std_errors[j],
                z,
                p_value: two_sided_p(z),
                reject: z.abs() > crit,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::GammaMethod;
    use crate::glm::Family;
    use ndarray::array;

    fn fit(coef: Array1<f64>) -> FitResult {
        let p = coef.len();
        FitResult {
            family: Family::Logistic,
            coefficients: coef,
            bread: Array2::eye(p),
            converged: true,
            iterations: 1,
            final_score_norm: 0.0,
            firth_used: false,
        }
    }

    fn estimate_with_z(z: f64) -> SpiEstimate {
        SpiEstimate::new(array![z], array![[1.0]], 0.1, "t").unwrap()
    }

    #[test]
    fn zero_gamma_returns_label_only_estimate() {
        let bv = fit(array![0.1, -2.0 / 3.0, 1e-17]);
        let tv = vec![fit(array![1.0, 2.0, 3.0]), fit(array![0.0, 0.5, 0.25])];
        let tf = vec![fit(array![0.3, 2.1, 2.0]), fit(array![-1.0, 0.5, 0.2])];
        let out = assemble_spi(&bv, &tv, &tf, &GammaEstimate::zero(3, 6)).unwrap();
        assert_eq!(out, bv.coefficients);
    }

    #[test]
    fn equal_thetas_leave_beta_unchanged() {
        let bv = fit(array![0.5, 1.5]);
        let t = vec![fit(array![0.2, -0.4])];
        let g = GammaEstimate::new(array![[3.0, -1.0], [0.5, 2.0]], GammaMethod::Lasso, 0.1);
        assert_eq!(assemble_spi(&bv, &t, &t, &g).unwrap(), bv.coefficients);
    }

    #[test]
    fn identity_gamma_with_shared_fits_returns_full_fit() {
        // s ≡ y: θ̂_V = β̂_V, so β̂_V − (θ̂_V − θ̂_F) = θ̂_F
        let bv = fit(array![0.7, -0.2]);
        let tv = vec![fit(array![0.7, -0.2])];
        let tf = vec![fit(array![0.65, -0.1])];
        let g = GammaEstimate::new(Array2::eye(2), GammaMethod::PluginValidation, 0.0);
        let out = assemble_spi(&bv, &tv, &tf, &g).unwrap();
        assert!((out[0] - 0.65).abs() < 1e-15 && (out[1] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_detected() {
        let bv = fit(array![0.5, 1.5]);
        let t = vec![fit(array![0.2, -0.4])];
        let g = GammaEstimate::zero(2, 3);
        assert!(matches!(assemble_spi(&bv, &t, &t, &g), Err(SpiError::DimensionMismatch(_))));
    }

    #[test]
    fn zero_gamma_variance_is_ipw_second_moment() {
        let psi = array![[1.0, 0.5], [-2.0, 0.0], [9.0, 9.0], [0.5, -1.5]];
        let eta = array![[1.0], [2.0], [3.0], [4.0]];
        let rho = Array1::from_elem(4, 0.25);
        let sel = [true, true, false, true];
        let v = asymptotic_variance(psi.view(), eta.view(), &GammaEstimate::zero(2, 1), rho.view(), &sel)
            .unwrap();
        let mut expect = Array2::<f64>::zeros((2, 2));
        for i in [0, 1, 3] {
            let r = psi.row(i);
            for a in 0..2 {
                for b in 0..2 {
                    expect[[a, b]] += r[a] * r[b] / (0.25 * 0.25);
                }
            }
        }
        expect /= 16.0;
        for (a, e) in v.iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn wald_boundaries() {
        let rows = wald_tests(&estimate_with_z(0.0), 0.05);
        assert_eq!(rows[0].p_value, 1.0);
        assert!(!rows[0].reject);
        // exactly at the 0.975 quantile: not rejected
        assert!(!wald_tests(&estimate_with_z(normal_quantile(0.975)), 0.05)[0].reject);
        assert!(wald_tests(&estimate_with_z(1.959964), 0.05)[0].reject);
        assert!(wald_tests(&estimate_with_z(1.96 + 1e-6), 0.05)[0].reject);
    }

    #[test]
    fn quantile_is_accurate() {
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-15);
        assert!((normal_quantile(0.5)).abs() < 1e-15);
    }

    #[test]
    fn estimate_invariants() {
        let e = SpiEstimate::new(array![1.0, -4.0], array![[4.0, 0.5], [0.5, 16.0]], 0.2, "x").unwrap();
        assert_eq!(e.std_errors, array![2.0, 4.0]);
        assert_eq!(e.z_stats, array![0.5, -1.0]);
        assert!(e.p_values.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}
