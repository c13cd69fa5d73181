//! End-to-end estimation on one cohort: full-data surrogate fits,
//! validation fits, influence rows, an augmentation matrix, and the final
//! estimate with its covariance.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{
    asymptotic_variance, gamma_plugin, gamma_regularized_cv, GammaEstimate, Penalty,
    PluginVariant, SpiEstimate,
};
use crate::error::{Result, SpiError};
use crate::glm::{fit_weighted_glm, influence_contributions, influence_rows, Family, FitResult};

/// Surrogate models fit on the whole cohort with unit weights.
#[derive(Debug, Clone)]
pub struct FullDataFits {
    pub theta_f: Vec<FitResult>,
    /// `N × dK` influence rows, surrogate blocks in order.
    pub eta: Array2<f64>,
}

impl FullDataFits {
    pub fn n_surrogates(&self) -> usize {
        self.theta_f.len()
    }

    pub fn block_width(&self) -> usize {
        self.theta_f.first().map_or(0, FitResult::n_params)
    }

    /// η columns of the listed surrogates, in the given order.
    pub fn eta_columns(&self, surrogates: &[usize]) -> Array2<f64> {
        let d = self.block_width();
        let cols: Vec<usize> = surrogates
            .iter()
            .flat_map(|&k| (k * d)..((k + 1) * d))
            .collect();
        self.eta.select(Axis(1), &cols)
    }
}

pub fn fit_full_surrogates(
    design: ArrayView2<f64>,
    surrogates: ArrayView2<f64>,
    family: Family,
) -> Result<FullDataFits> {
    let n = design.nrows();
    let d = design.ncols();
    let k = surrogates.ncols();
    let ones = Array1::<f64>::ones(n);
    let mut theta_f = Vec::with_capacity(k);
    let mut eta = Array2::<f64>::zeros((n, d * k));
    for j in 0..k {
        let s = surrogates.column(j);
        let fit = fit_weighted_glm(design, s, ones.view(), family, false)?;
        let rows = influence_contributions(&fit, design, s)?;
        eta.slice_mut(s![.., j * d..(j + 1) * d]).assign(&rows);
        theta_f.push(fit);
    }
    Ok(FullDataFits { theta_f, eta })
}

/// Outcome and surrogate models fit on the validation set with weights `1/ρ`.
#[derive(Debug, Clone)]
pub struct ValidationFits {
    /// Cohort indices of the validation subjects, ascending.
    pub indices: Vec<usize>,
    pub beta_v: FitResult,
    pub theta_v: Vec<FitResult>,
    /// `n × p` outcome influence rows, bread from the weighted validation fit.
    pub psi: Array2<f64>,
}

impl ValidationFits {
    /// ψ rows spread over all `N` subjects, zero where unlabeled.
    pub fn psi_all(&self, n_total: usize) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros((n_total, self.psi.ncols()));
        for (r, &i) in self.indices.iter().enumerate() {
            out.row_mut(i).assign(&self.psi.row(r));
        }
        out
    }
}

/// `labels` holds the validated outcome for every index in `indices`, in order.
pub fn fit_validation(
    design: ArrayView2<f64>,
    surrogates: ArrayView2<f64>,
    indices: &[usize],
    labels: ArrayView1<f64>,
    inclusion_prob: ArrayView1<f64>,
    family: Family,
    firth: bool,
) -> Result<ValidationFits> {
    if labels.len() != indices.len() {
        return Err(SpiError::DimensionMismatch(format!(
            "{} labels for {} validation subjects",
            labels.len(),
            indices.len()
        )));
    }
    let x_v = design.select(Axis(0), indices);
    let w_v: Array1<f64> = indices.iter().map(|&i| 1.0 / inclusion_prob[i]).collect();
    let beta_v = fit_weighted_glm(x_v.view(), labels, w_v.view(), family, firth)?;
    let psi = influence_rows(
        x_v.view(),
        labels,
        beta_v.coefficients.view(),
        beta_v.bread.view(),
        family,
    )?;
    let theta_v = (0..surrogates.ncols())
        .map(|k| {
            let s_v = surrogates.column(k).select(Axis(0), indices);
            fit_weighted_glm(x_v.view(), s_v.view(), w_v.view(), family, firth)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ValidationFits {
        indices: indices.to_vec(),
        beta_v,
        theta_v,
        psi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaRule {
    Zero,
    Plugin(PluginVariant),
    Regularized { penalty: Penalty, folds: usize },
}

/// Everything needed to form one augmented estimate.
pub struct EstimationInput<'a> {
    pub full: &'a FullDataFits,
    pub validation: &'a ValidationFits,
    pub inclusion_prob: ArrayView1<'a, f64>,
    pub selected: &'a [bool],
    /// Surrogates entering the augmentation; `None` uses all of them.
    pub surrogate_subset: Option<&'a [usize]>,
}

/// Forms `β̂_V − Γ(θ̂_V − θ̂_F)` for the chosen Γ rule and its covariance.
pub fn estimate<R: Rng + ?Sized>(
    input: &EstimationInput<'_>,
    rule: GammaRule,
    label: &str,
    rng: &mut R,
) -> Result<(SpiEstimate, GammaEstimate)> {
    let full = input.full;
    let val = input.validation;
    let n_total = full.eta.nrows();
    let all: Vec<usize> = (0..full.n_surrogates()).collect();
    let subset = input.surrogate_subset.unwrap_or(&all);
    let eta_all = full.eta_columns(subset);
    let p = val.beta_v.n_params();
    let q = eta_all.ncols();

    let gamma = match rule {
        GammaRule::Zero => GammaEstimate::zero(p, q),
        GammaRule::Plugin(variant) => gamma_plugin(
            val.psi.view(),
            eta_all.view(),
            input.inclusion_prob,
            input.selected,
            variant,
        )?,
        GammaRule::Regularized { penalty, folds } => {
            let eta_v = eta_all.select(Axis(0), &val.indices);
            let rho_v = input.inclusion_prob.select(Axis(0), &val.indices);
            gamma_regularized_cv(val.psi.view(), eta_v.view(), rho_v.view(), penalty, folds, rng)?.0
        }
    };

    let theta_v: Vec<FitResult> = subset.iter().map(|&k| val.theta_v[k].clone()).collect();
    let theta_f: Vec<FitResult> = subset.iter().map(|&k| full.theta_f[k].clone()).collect();
    let coefficients = crate::augment::assemble_spi(&val.beta_v, &theta_v, &theta_f, &gamma)?;
    let covariance = asymptotic_variance(
        val.psi_all(n_total).view(),
        eta_all.view(),
        &gamma,
        input.inclusion_prob,
        input.selected,
    )?;
    let fraction = val.indices.len() as f64 / n_total as f64;
    Ok((
        SpiEstimate::new(coefficients, covariance, fraction, label)?,
        gamma,
    ))
}
