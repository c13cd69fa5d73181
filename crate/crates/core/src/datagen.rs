//! Synthetic cohorts: AR(1) Gaussian covariates, logistic outcomes and
//! surrogates with a fixed sensitivity/specificity schedule.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiError};
use crate::glm::logistic;
use crate::rng::{stream, Purpose};

/// `P(s = 1 | y = 1)` and `P(s = 0 | y = 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub sensitivity: f64,
    pub specificity: f64,
}

impl SurrogateSpec {
    pub fn new(sensitivity: f64, specificity: f64) -> Result<Self> {
        let ok = |v: f64| v > 0.0 && v <= 1.0;
        if !ok(sensitivity) || !ok(specificity) {
            return Err(SpiError::InvalidSchedule(format!(
                "sensitivity {sensitivity} / specificity {specificity} outside (0, 1]"
            )));
        }
        Ok(Self {
            sensitivity,
            specificity,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SurrogateKind {
    Misclassified(SurrogateSpec),
    /// Bernoulli(1/2) independent of everything else.
    Coin,
}

const FIRST_SENSITIVITY: f64 = 0.90;
const FIRST_SPECIFICITY: f64 = 0.95;
const SCHEDULE_STEP: f64 = 0.05;
const SCHEDULE_FLOOR: f64 = 0.5;

/// Surrogate 1 at (0.90, 0.95), each later one 0.05 lower in both, and the
/// last one a fair coin.
pub fn surrogate_schedule(k: usize) -> Result<Vec<SurrogateKind>> {
    if k < 2 {
        return Err(SpiError::InvalidSchedule(format!(
            "need at least 2 surrogates, got {k}"
        )));
    }
    let mut out = Vec::with_capacity(k);
    for j in 0..k - 1 {
        let sens = FIRST_SENSITIVITY - SCHEDULE_STEP * j as f64;
        let spec = FIRST_SPECIFICITY - SCHEDULE_STEP * j as f64;
        if sens < SCHEDULE_FLOOR - 1e-9 || spec < SCHEDULE_FLOOR - 1e-9 {
            return Err(SpiError::InvalidSchedule(format!(
                "surrogate {} would have sensitivity {:.2}; at most 10 surrogates fit the schedule",
                j + 1,
                sens
            )));
        }
        out.push(SurrogateKind::Misclassified(SurrogateSpec::new(
            sens.max(SCHEDULE_FLOOR),
            spec,
        )?));
    }
    out.push(SurrogateKind::Coin);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum CaseId {
    #[serde(rename = "case1")]
    Case1,
    #[serde(rename = "case2")]
    Case2,
    #[serde(rename = "case3")]
    Case3,
}

impl CaseId {
    pub fn number(self) -> u64 {
        match self {
            CaseId::Case1 => 1,
            CaseId::Case2 => 2,
            CaseId::Case3 => 3,
        }
    }
}

impl std::fmt::Display for CaseId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "case{}", self.number())
    }
}

impl std::str::FromStr for CaseId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().trim_start_matches("case") {
            "1" => Ok(CaseId::Case1),
            "2" => Ok(CaseId::Case2),
            "3" => Ok(CaseId::Case3),
            _ => Err(format!("unknown case `{s}` (expected 1, 2 or 3)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCase {
    pub case_id: CaseId,
    /// Intercept first.
    pub beta0: Vec<f64>,
    pub p: usize,
    pub n_total: usize,
    pub ar_rho: f64,
    pub surrogate_count: usize,
}

const CASE1_SLOPES: [f64; 10] = [0.6, 0.5, -0.7, -1.0, -0.5, 0.7, -0.6, 0.0, 0.0, 0.0];
const CASE3_BETA: [f64; 30] = [
    -2.5, 0.6, 0.5, -0.7, -1.0, -0.5, 0.7, -0.6, 0.7, 1.0, -2.5, 0.4, -0.6, -0.8, 1.0, -0.9, 0.5,
    -0.5, 1.2, 0.9, -0.6, 0.6, 0.5, 1.3, -1.1, 0.0, 0.0, 0.0, 0.0, 0.0,
];

pub fn make_case(case_id: CaseId) -> SyntheticCase {
    let beta0: Vec<f64> = match case_id {
        CaseId::Case1 => std::iter::once(-2.0).chain(CASE1_SLOPES).collect(),
        CaseId::Case2 => std::iter::once(-3.2).chain(CASE1_SLOPES).collect(),
        CaseId::Case3 => CASE3_BETA.to_vec(),
    };
    SyntheticCase {
        case_id,
        p: beta0.len(),
        beta0,
        n_total: 4500,
        ar_rho: 0.5,
        surrogate_count: 2,
    }
}

impl SyntheticCase {
    pub fn with_surrogates(mut self, k: usize) -> Self {
        self.surrogate_count = k;
        self
    }

    /// Per coefficient: `None` for the intercept, otherwise whether the true
    /// coefficient is nonzero.
    pub fn predictive_mask(&self) -> Vec<Option<bool>> {
        predictive_mask(&self.beta0)
    }
}

pub fn predictive_mask(beta0: &[f64]) -> Vec<Option<bool>> {
    beta0
        .iter()
        .enumerate()
        .map(|(j, b)| if j == 0 { None } else { Some(*b != 0.0) })
        .collect()
}

/// Rows from a zero-mean Gaussian with covariance `ar_rho^|i−j|`, built by
/// the recursion `x_j = ar_rho·x_{j−1} + sqrt(1 − ar_rho²)·ε_j`.
pub fn gen_covariates<R: Rng + ?Sized>(
    n: usize,
    p_minus_1: usize,
    ar_rho: f64,
    rng: &mut R,
) -> Array2<f64> {
    assert!(ar_rho.abs() < 1.0, "AR(1) coefficient must be in (-1, 1)");
    let innov = (1.0 - ar_rho * ar_rho).sqrt();
    let mut x = Array2::<f64>::zeros((n, p_minus_1));
    for i in 0..n {
        let mut prev = 0.0;
        for j in 0..p_minus_1 {
            let e: f64 = StandardNormal.sample(rng);
            let v = if j == 0 { e } else { ar_rho * prev + innov * e };
            x[[i, j]] = v;
            prev = v;
        }
    }
    x
}

/// Bernoulli draws at `logistic((1, x)ᵀ β0)`; `x` excludes the intercept.
pub fn gen_outcome<R: Rng + ?Sized>(
    x: ArrayView2<f64>,
    beta0: &[f64],
    rng: &mut R,
) -> Result<Array1<f64>> {
    if beta0.len() != x.ncols() + 1 {
        return Err(SpiError::DimensionMismatch(format!(
            "beta0 has {} entries for {} covariates plus intercept",
            beta0.len(),
            x.ncols()
        )));
    }
    let slopes = ArrayView1::from(&beta0[1..]);
    Ok(x.rows()
        .into_iter()
        .map(|row| {
            let tau = logistic(beta0[0] + row.dot(&slopes));
            if rng.gen::<f64>() < tau {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}

/// `k` surrogate columns following [`surrogate_schedule`], conditionally
/// independent of each other and of `x` given `y`.
pub fn gen_surrogates<R: Rng + ?Sized>(
    y: ArrayView1<f64>,
    k: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let schedule = surrogate_schedule(k)?;
    let mut s = Array2::<f64>::zeros((y.len(), k));
    for i in 0..y.len() {
        for (j, kind) in schedule.iter().enumerate() {
            let u: f64 = rng.gen();
            let positive = match kind {
                SurrogateKind::Coin => u < 0.5,
                SurrogateKind::Misclassified(spec) => {
                    if y[i] == 1.0 {
                        u < spec.sensitivity
                    } else {
                        u >= spec.specificity
                    }
                }
            };
            s[[i, j]] = if positive { 1.0 } else { 0.0 };
        }
    }
    Ok(s)
}

/// A generated cohort before any labeling.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    /// `N × p` with the leading intercept column.
    pub design: Array2<f64>,
    pub y: Array1<f64>,
    pub surrogates: Array2<f64>,
}

impl SyntheticData {
    pub fn covariates(&self) -> ArrayView2<'_, f64> {
        self.design.slice(s![.., 1..])
    }

    pub fn n_total(&self) -> usize {
        self.design.nrows()
    }
}

pub fn with_intercept(x: ArrayView2<f64>) -> Array2<f64> {
    let mut d = Array2::<f64>::ones((x.nrows(), x.ncols() + 1));
    d.slice_mut(s![.., 1..]).assign(&x);
    d
}

/// Generates a cohort for `case` reproducibly from `(seed, key)`; each piece
/// uses its own keyed stream.
pub fn generate(case: &SyntheticCase, seed: u64, key: &[u64]) -> Result<SyntheticData> {
    let part = |purpose: Purpose| {
        let mut k = key.to_vec();
        k.push(purpose as u64);
        stream(seed, &k)
    };
    let x = gen_covariates(
        case.n_total,
        case.p - 1,
        case.ar_rho,
        &mut part(Purpose::Covariates),
    );
    let y = gen_outcome(x.view(), &case.beta0, &mut part(Purpose::Outcome))?;
    let surrogates = gen_surrogates(y.view(), case.surrogate_count, &mut part(Purpose::Surrogates))?;
    Ok(SyntheticData {
        design: with_intercept(x.view()),
        y,
        surrogates,
    })
}
