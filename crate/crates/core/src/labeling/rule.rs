use crate::error::{Result, SpiError};

/// Truncated optimal labeling probability: 1 when `σ > c*`, else `σ/c*`.
#[inline]
pub fn optimal_rho(sigma: f64, c_star: f64) -> f64 {
    debug_assert!(c_star > 0.0 && sigma >= 0.0);
    if sigma > c_star {
        1.0
    } else {
        sigma / c_star
    }
}

/// Outcome of the per-wave threshold equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Finite(f64),
    /// Even labeling every eligible subject does not exceed the target;
    /// the caller labels all of them with probability 1.
    Infeasible,
}

impl Threshold {
    /// Rule value for one subject; ineligible subjects are not special-cased.
    pub fn rho(self, sigma: f64) -> f64 {
        match self {
            Threshold::Finite(c) => optimal_rho(sigma, c),
            Threshold::Infeasible => 1.0,
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Threshold::Finite(c) => Some(c),
            Threshold::Infeasible => None,
        }
    }
}

/// Mean rule value `(1/N) Σ eligible_i · ρ*(σ_i, c)`.
pub fn budget_mean(sigmas: &[f64], eligible: &[bool], c: f64) -> f64 {
    let n = sigmas.len() as f64;
    sigmas
        .iter()
        .zip(eligible)
        .filter(|(_, &e)| e)
        .map(|(&s, _)| optimal_rho(s, c))
        .sum::<f64>()
        / n
}

/// Solves `(1/N) Σ eligible_i · ρ*(σ_i, c*) = target` for `c*`.
///
/// Walks the eligible σ's in descending order: with the top `j` subjects
/// capped at probability 1 the equation is linear in `1/c`, giving
/// `c = S_j / (N·target − j)` where `S_j` sums the remaining σ's. The first
/// `j` whose `c` is consistent with the cap pattern is the root. Bisection on
/// the monotone budget function is the fallback.
pub fn solve_budget_threshold(sigmas: &[f64], eligible: &[bool], target: f64) -> Result<Threshold> {
    if sigmas.len() != eligible.len() {
        return Err(SpiError::DimensionMismatch(format!(
            "{} sigmas for {} eligibility flags",
            sigmas.len(),
            eligible.len()
        )));
    }
    if !(target > 0.0 && target <= 1.0) {
        return Err(SpiError::InvalidInput(format!("target {target} outside (0, 1]")));
    }
    if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(SpiError::InvalidInput("sigmas must be finite and nonnegative".into()));
    }
    let mut pos: Vec<f64> = sigmas
        .iter()
        .zip(eligible)
        .filter(|(&s, &e)| e && s > 0.0)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() {
        return Err(SpiError::BudgetInfeasible);
    }
    let n = sigmas.len() as f64;
    let mass = n * target;
    if pos.len() as f64 <= mass {
        return Ok(Threshold::Infeasible);
    }
    pos.sort_by(|a, b| b.partial_cmp(a).expect("finite sigmas"));
    let mut tail: f64 = pos.iter().sum();
    for j in 0..pos.len() {
        let rem = mass - j as f64;
        if rem <= 0.0 {
            break;
        }
        let c = tail / rem;
        let upper_ok = j == 0 || pos[j - 1] > c;
        if upper_ok && pos[j] <= c {
            return Ok(Threshold::Finite(c));
        }
        tail -= pos[j];
    }
    Ok(Threshold::Finite(bisect_threshold(sigmas, eligible, target)))
}

/// Bisection on `c` for the budget equation; assumes a finite root exists.
pub fn bisect_threshold(sigmas: &[f64], eligible: &[bool], target: f64) -> f64 {
    let mut lo = 0.0_f64;
    let mut hi = sigmas.iter().fold(0.0_f64, |m, &s| m.max(s)).max(f64::MIN_POSITIVE);
    // the mean is below target at hi; grow until it is
    while budget_mean(sigmas, eligible, hi) > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if budget_mean(sigmas, eligible, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
