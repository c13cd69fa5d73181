//! Weighted m-estimation for logistic and linear GLMs.
//!
//! Fits solve `Σ w_i x_i (y_i − μ(x_iᵀβ)) = 0` by damped Newton iteration,
//! optionally with Firth's modified score for logistic models. The bread
//! matrix and per-row influence contributions are derived from the fit.

mod cohort;
mod family;

pub use cohort::Cohort;
pub use family::{logistic, Family};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiError};
use crate::numerics::{cholesky_jittered, max_abs, symmetrize, Cholesky};

/// Newton steps allowed after the tolerance is met.
const MAX_POLISH_STEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Sup-norm tolerance on the weighted score.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 50,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub family: Family,
    pub coefficients: Array1<f64>,
    /// `(1/Σw) Σ w_i μ'(x_iᵀβ) x_i x_iᵀ` at the returned coefficients.
    pub bread: Array2<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_score_norm: f64,
    pub firth_used: bool,
}

impl FitResult {
    pub fn n_params(&self) -> usize {
        self.coefficients.len()
    }
}

fn check_inputs(
    design: ArrayView2<f64>,
    response: ArrayView1<f64>,
    weights: ArrayView1<f64>,
    family: Family,
) -> Result<()> {
    let n = design.nrows();
    if response.len() != n || weights.len() != n {
        return Err(SpiError::DimensionMismatch(format!(
            "design has {} rows, response {}, weights {}",
            n,
            response.len(),
            weights.len()
        )));
    }
    if n == 0 {
        return Err(SpiError::InvalidInput("empty design".into()));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(SpiError::InvalidInput(
            "weights must be finite and positive".into(),
        ));
    }
    if !design.iter().all(|v| v.is_finite()) || !response.iter().all(|v| v.is_finite()) {
        return Err(SpiError::InvalidInput("non-finite design or response".into()));
    }
    if family == Family::Logistic && response.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(SpiError::InvalidInput(
            "logistic responses must be 0 or 1".into(),
        ));
    }
    Ok(())
}

fn linear_predictor(design: ArrayView2<f64>, beta: ArrayView1<f64>) -> Array1<f64> {
    design.dot(&beta)
}

/// `Σ w_i x_i (y_i − μ(x_iᵀβ))`.
pub fn weighted_score(
    design: ArrayView2<f64>,
    response: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    weights: ArrayView1<f64>,
    family: Family,
) -> Array1<f64> {
    let eta = linear_predictor(design, beta);
    let resid = Array1::from_shape_fn(eta.len(), |i| {
        weights[i] * (response[i] - family.mean(eta[i]))
    });
    design.t().dot(&resid)
}

/// Unnormalized information `Σ w_i μ'(x_iᵀβ) x_i x_iᵀ`.
fn information(
    design: ArrayView2<f64>,
    beta: ArrayView1<f64>,
    weights: ArrayView1<f64>,
    family: Family,
) -> Array2<f64> {
    let eta = linear_predictor(design, beta);
    let v = Array1::from_shape_fn(eta.len(), |i| weights[i] * family.mean_deriv(eta[i]));
    let scaled = &design * &v.view().insert_axis(Axis(1));
    let mut info = scaled.t().dot(&design);
    symmetrize(&mut info);
    info
}

/// Leverages `h_i = v_i x_iᵀ I⁻¹ x_i` of the weighted information
/// `I = Xᵀ V X`, `V = diag(w_i μ_i (1 − μ_i))`.
pub fn firth_leverages(
    design: ArrayView2<f64>,
    beta: ArrayView1<f64>,
    weights: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let info = information(design, beta, weights, Family::Logistic);
    let (chol, _) = cholesky_jittered(info.view())?;
    Ok(leverages_with(&chol, design, beta, weights))
}

fn leverages_with(
    chol: &Cholesky,
    design: ArrayView2<f64>,
    beta: ArrayView1<f64>,
    weights: ArrayView1<f64>,
) -> Array1<f64> {
    let l = chol.lower();
    let p = design.ncols();
    let mut z = vec![0.0; p];
    Array1::from_shape_fn(design.nrows(), |i| {
        let row = design.row(i);
        // forward solve L z = x_i, so x_iᵀ I⁻¹ x_i = ‖z‖²
        let mut q = 0.0;
        for a in 0..p {
            let mut s = row[a];
            for b in 0..a {
                s -= l[[a, b]] * z[b];
            }
            z[a] = s / l[[a, a]];
            q += z[a] * z[a];
        }
        weights[i] * Family::Logistic.mean_deriv(row.dot(&beta)) * q
    })
}

/// Firth-adjusted weighted score `Σ w_i x_i {y_i − μ_i + h_i (1/2 − μ_i)}`.
pub fn firth_score(
    design: ArrayView2<f64>,
    response: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    weights: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let h = firth_leverages(design, beta, weights)?;
    Ok(firth_score_with(design, response, beta, weights, &h))
}

fn firth_score_with(
    design: ArrayView2<f64>,
    response: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    weights: ArrayView1<f64>,
    h: &Array1<f64>,
) -> Array1<f64> {
    let eta = linear_predictor(design, beta);
    let adj = Array1::from_shape_fn(eta.len(), |i| {
        let mu = logistic(eta[i]);
        weights[i] * (response[i] - mu + h[i] * (0.5 - mu))
    });
    design.t().dot(&adj)
}

/// Bread matrix `(1/Σw) Σ w_i μ'(x_iᵀβ) x_i x_iᵀ`.
pub fn bread_matrix(
    design: ArrayView2<f64>,
    beta: ArrayView1<f64>,
    family: Family,
    weights: ArrayView1<f64>,
) -> Array2<f64> {
    let total: f64 = weights.sum();
    information(design, beta, weights, family) / total
}

struct Objective<'d, 'r, 'w> {
    design: ArrayView2<'d, f64>,
    response: ArrayView1<'r, f64>,
    weights: ArrayView1<'w, f64>,
    family: Family,
    firth: bool,
}

impl Objective<'_, '_, '_> {
    /// Score (Firth-adjusted when requested) and the Cholesky factor of the
    /// information used as the Newton Jacobian.
    fn evaluate(&self, beta: ArrayView1<f64>) -> Result<(Array1<f64>, Cholesky)> {
        let info = information(self.design, beta, self.weights, self.family);
        let (chol, _) = cholesky_jittered(info.view())?;
        let score = if self.firth {
            let h = leverages_with(&chol, self.design, beta, self.weights);
            firth_score_with(self.design, self.response, beta, self.weights, &h)
        } else {
            weighted_score(self.design, self.response, beta, self.weights, self.family)
        };
        Ok((score, chol))
    }
}

/// Solves the weighted estimating equation for `family`.
///
/// `firth` is honored for the logistic family only.
pub fn fit_weighted_glm(
    design: ArrayView2<f64>,
    response: ArrayView1<f64>,
    weights: ArrayView1<f64>,
    family: Family,
    firth: bool,
) -> Result<FitResult> {
    fit_weighted_glm_with(design, response, weights, family, firth, &FitOptions::default())
}

pub fn fit_weighted_glm_with(
    design: ArrayView2<f64>,
    response: ArrayView1<f64>,
    weights: ArrayView1<f64>,
    family: Family,
    firth: bool,
    options: &FitOptions,
) -> Result<FitResult> {
    check_inputs(design, response, weights, family)?;
    let p = design.ncols();
    if design.nrows() < p + 2 {
        return Err(SpiError::NoConvergence {
            iterations: 0,
            score_norm: f64::NAN,
        });
    }
    let firth = firth && family == Family::Logistic;
    let obj = Objective {
        design,
        response,
        weights,
        family,
        firth,
    };

    let mut beta = Array1::<f64>::zeros(p);
    let (mut score, mut chol) = obj.evaluate(beta.view())?;
    let mut norm = max_abs(score.view());
    let mut iterations = 0;
    let mut polish = 0;
    let mut last_step = f64::INFINITY;

    loop {
        if norm <= options.tolerance {
            // keep stepping until the iterate stops moving, so the root does
            // not depend on the weight scale through the absolute tolerance
            if polish >= MAX_POLISH_STEPS || last_step <= 1e-15 * (1.0 + max_abs(beta.view())) {
                break;
            }
            polish += 1;
        }
        if iterations >= options.max_iterations {
            if norm <= options.tolerance {
                break;
            }
            return Err(SpiError::NoConvergence {
                iterations,
                score_norm: norm,
            });
        }
        iterations += 1;
        let step = chol.solve_vec(score.view());
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let candidate = &beta + &(&step * t);
            if candidate.iter().all(|v| v.is_finite()) {
                if let Ok((s, c)) = obj.evaluate(candidate.view()) {
                    let n = max_abs(s.view());
                    if n < norm {
                        accepted = Some((candidate, s, c, n));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((b, s, c, n)) => {
                last_step = max_abs((&b - &beta).view());
                beta = b;
                score = s;
                chol = c;
                norm = n;
            }
            None if norm <= options.tolerance => break,
            None => {
                return Err(SpiError::NoConvergence {
                    iterations,
                    score_norm: norm,
                })
            }
        }
    }

    let bread = bread_matrix(design, beta.view(), family, weights);
    Ok(FitResult {
        family,
        coefficients: beta,
        bread,
        converged: true,
        iterations,
        final_score_norm: norm,
        firth_used: firth,
    })
}

/// Rows `bread⁻¹ x_i (y_i − μ(x_iᵀβ))` for an arbitrary bread matrix.
pub fn influence_rows(
    design: ArrayView2<f64>,
    response: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    bread: ArrayView2<f64>,
    family: Family,
) -> Result<Array2<f64>> {
    if design.ncols() != beta.len() || bread.nrows() != beta.len() {
        return Err(SpiError::DimensionMismatch(format!(
            "design has {} columns, beta {}, bread {}",
            design.ncols(),
            beta.len(),
            bread.nrows()
        )));
    }
    if response.len() != design.nrows() {
        return Err(SpiError::DimensionMismatch(format!(
            "design has {} rows, response {}",
            design.nrows(),
            response.len()
        )));
    }
    let (chol, _) = cholesky_jittered(bread)?;
    let inv = chol.inverse();
    let eta = linear_predictor(design, beta);
    let resid = Array1::from_shape_fn(eta.len(), |i| response[i] - family.mean(eta[i]));
    let scores = &design * &resid.view().insert_axis(Axis(1));
    // rows are (bread⁻¹ score_i)ᵀ = score_iᵀ bread⁻¹ since bread is symmetric
    Ok(scores.dot(&inv))
}

/// Influence contributions `ψ_i = bread⁻¹ x_i (y_i − μ(x_iᵀβ̂))` for the rows
/// the fit was computed on.
pub fn influence_contributions(
    fit: &FitResult,
    design: ArrayView2<f64>,
    response: ArrayView1<f64>,
) -> Result<Array2<f64>> {
    influence_rows(
        design,
        response,
        fit.coefficients.view(),
        fit.bread.view(),
        fit.family,
    )
}
