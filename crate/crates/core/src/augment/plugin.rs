use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{augmentation_weight, GammaEstimate, GammaMethod};
use crate::error::{Result, SpiError};
use crate::numerics::{cholesky_jittered, symmetrize, weighted_cross, weighted_gram};

/// Which Gram matrix the plug-in inverts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PluginVariant {
    /// `Σ_{i≤N} (1−ρ_i)/ρ_i η_i η_iᵀ` over the whole cohort.
    FullDenominator,
    /// `Σ_{i∈V} (1−ρ_i)/ρ_i² η_i η_iᵀ` over the validation set.
    ValidationDenominator,
}

/// Plug-in estimate of the optimal augmentation matrix.
///
/// `psi` holds one row per validation subject in cohort order; `eta`,
/// `inclusion_prob` and `selected` cover all `N` subjects.
pub fn gamma_plugin(
    psi: ArrayView2<f64>,
    eta: ArrayView2<f64>,
    inclusion_prob: ArrayView1<f64>,
    selected: &[bool],
    variant: PluginVariant,
) -> Result<GammaEstimate> {
    let n_total = eta.nrows();
    if inclusion_prob.len() != n_total || selected.len() != n_total {
        return Err(SpiError::DimensionMismatch(format!(
            "eta has {} rows, inclusion_prob {}, selected {}",
            n_total,
            inclusion_prob.len(),
            selected.len()
        )));
    }
    let idx: Vec<usize> = (0..n_total).filter(|&i| selected[i]).collect();
    if psi.nrows() != idx.len() {
        return Err(SpiError::DimensionMismatch(format!(
            "psi has {} rows for {} selected subjects",
            psi.nrows(),
            idx.len()
        )));
    }
    let eta_v = eta.select(Axis(0), &idx);
    let w_v: Array1<f64> = idx
        .iter()
        .map(|&i| augmentation_weight(inclusion_prob[i]))
        .collect();
    let numerator = weighted_cross(psi, eta_v.view(), w_v.view());
    let mut denominator = match variant {
        PluginVariant::FullDenominator => {
            let w = inclusion_prob.mapv(|r| (1.0 - r) / r);
            weighted_gram(eta, w.view())
        }
        PluginVariant::ValidationDenominator => weighted_gram(eta_v.view(), w_v.view()),
    };
    symmetrize(&mut denominator);
    let (chol, _) = cholesky_jittered(denominator.view())?;
    // Γ = Num · Den⁻¹, computed as (Den⁻¹ Numᵀ)ᵀ
    let gamma = chol.solve_mat(numerator.t()).reversed_axes();
    let method = match variant {
        PluginVariant::FullDenominator => GammaMethod::PluginFull,
        PluginVariant::ValidationDenominator => GammaMethod::PluginValidation,
    };
    Ok(GammaEstimate::new(gamma, method, 0.0))
}
