//! Simulation studies: method registry, experiment configuration, the
//! ablation runner, aggregation, result files and the command line.

pub mod cli;
mod io;

pub use io::{
    emit_results, read_cohort_csv, read_results, render_results, write_cohort_csv, CsvCohort, OutputFormat,
};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::{s, Array1, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{wald_tests, Penalty, PluginVariant, SpiEstimate};
use crate::datagen::{generate, make_case, predictive_mask, CaseId, SyntheticCase, SyntheticData};
use crate::error::{Result, SpiError};
use crate::glm::Family;
use crate::labeling::{
    poisson_sample, run_multiwave, InclusionFormula, MultiwaveOptions, RidgeRegressor, WaveConfig,
};
use crate::pipeline::{estimate, fit_full_surrogates, fit_validation, EstimationInput, FullDataFits, GammaRule};
use crate::rng::{stream, Purpose};

/// Redraws allowed for a failed repetition before it is recorded as failed.
pub const MAX_REDRAWS: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[allow(non_camel_case_types)]
pub enum MethodId {
    #[serde(rename = "lo")]
    LO,
    #[serde(rename = "lof")]
    LOF,
    #[serde(rename = "base-single")]
    BaseSPI_Single,
    #[serde(rename = "base-multi")]
    BaseSPI_Multi,
    #[serde(rename = "spip-gl")]
    SPIp_GL,
    #[serde(rename = "spip-l1")]
    SPIp_L1,
    #[serde(rename = "spipp-gl")]
    SPIpp_GL,
    #[serde(rename = "spipp-l1")]
    SPIpp_L1,
}

impl MethodId {
    pub const ALL: [MethodId; 8] = [
        MethodId::LO,
        MethodId::LOF,
        MethodId::BaseSPI_Single,
        MethodId::BaseSPI_Multi,
        MethodId::SPIp_GL,
        MethodId::SPIp_L1,
        MethodId::SPIpp_GL,
        MethodId::SPIpp_L1,
    ];

    /// Command-line and file name.
    pub fn name(self) -> &'static str {
        match self {
            MethodId::LO => "lo",
            MethodId::LOF => "lof",
            MethodId::BaseSPI_Single => "base-single",
            MethodId::BaseSPI_Multi => "base-multi",
            MethodId::SPIp_GL => "spip-gl",
            MethodId::SPIp_L1 => "spip-l1",
            MethodId::SPIpp_GL => "spipp-gl",
            MethodId::SPIpp_L1 => "spipp-l1",
        }
    }

    /// Display label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            MethodId::LO => "LO",
            MethodId::LOF => "LOF",
            MethodId::BaseSPI_Single => "Base-SPI(Single)",
            MethodId::BaseSPI_Multi => "Base-SPI(Multi)",
            MethodId::SPIp_GL => "SPI+(GL)",
            MethodId::SPIp_L1 => "SPI+(L1)",
            MethodId::SPIpp_GL => "SPI++(GL)",
            MethodId::SPIpp_L1 => "SPI++(L1)",
        }
    }

    fn code(self) -> u64 {
        self as u64 + 1
    }

    pub fn is_multiwave(self) -> bool {
        matches!(self, MethodId::SPIpp_GL | MethodId::SPIpp_L1)
    }

    pub fn uses_surrogates(self) -> bool {
        !matches!(self, MethodId::LO | MethodId::LOF)
    }

    /// Firth's correction everywhere except the plain label-only fit.
    pub fn uses_firth(self) -> bool {
        self != MethodId::LO
    }

    pub fn penalty(self) -> Option<Penalty> {
        match self {
            MethodId::SPIp_GL | MethodId::SPIpp_GL => Some(Penalty::GroupLasso),
            MethodId::SPIp_L1 | MethodId::SPIpp_L1 => Some(Penalty::Lasso),
            _ => None,
        }
    }

    /// Augmentation rule and surrogate subset for single-wave methods;
    /// `single` is the surrogate Base-SPI(Single) keeps.
    fn single_wave_rule(self, folds: usize, single: usize) -> (GammaRule, Option<Vec<usize>>) {
        match self {
            MethodId::LO | MethodId::LOF => (GammaRule::Zero, Some(Vec::new())),
            MethodId::BaseSPI_Single => (GammaRule::Plugin(PluginVariant::FullDenominator), Some(vec![single])),
            MethodId::BaseSPI_Multi => (GammaRule::Plugin(PluginVariant::FullDenominator), None),
            MethodId::SPIp_GL | MethodId::SPIp_L1 | MethodId::SPIpp_GL | MethodId::SPIpp_L1 => (
                GammaRule::Regularized {
                    penalty: self.penalty().expect("regularized method"),
                    folds,
                },
                None,
            ),
        }
    }
}

impl std::fmt::Display for MethodId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MethodId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        MethodId::ALL
            .into_iter()
            .find(|m| m.name() == key || m.label().to_ascii_lowercase() == key)
            .ok_or_else(|| {
                let names: Vec<_> = MethodId::ALL.iter().map(|m| m.name()).collect();
                format!("unknown method `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub case_id: CaseId,
    pub k_values: Vec<usize>,
    pub budget: f64,
    pub repetitions: usize,
    pub methods: Vec<MethodId>,
    pub pilot_ratio: f64,
    pub waves: usize,
    pub seed: u64,
    pub cv_folds: usize,
    /// Significance level of the recorded Wald decisions.
    pub level: f64,
    /// Cohort size; the synthetic designs use 4500.
    pub n_total: usize,
    pub inclusion_formula: InclusionFormula,
    /// Worker threads; 0 picks the available parallelism. Never affects output.
    pub threads: usize,
    pub output: Option<std::path::PathBuf>,
    pub format: OutputFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            case_id: CaseId::Case1,
            k_values: (2..=10).collect(),
            budget: 1.0 / 30.0,
            repetitions: 200,
            methods: vec![
                MethodId::LO,
                MethodId::LOF,
                MethodId::BaseSPI_Single,
                MethodId::BaseSPI_Multi,
                MethodId::SPIp_GL,
                MethodId::SPIp_L1,
            ],
            pilot_ratio: 0.3,
            waves: 4,
            seed: 2024,
            cv_folds: 5,
            level: 0.05,
            n_total: 4500,
            inclusion_formula: InclusionFormula::Exact,
            threads: 0,
            output: None,
            format: OutputFormat::Csv,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SpiError::InvalidInput(m));
        if self.k_values.is_empty() || self.k_values.iter().any(|&k| !(2..=10).contains(&k)) {
            return bad(format!("surrogate counts {:?} must lie in 2..=10", self.k_values));
        }
        if self.methods.is_empty() {
            return bad("no methods requested".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level {} outside (0, 1)", self.level));
        }
        if self.cv_folds < 2 {
            return bad("at least 2 cross-validation folds are needed".into());
        }
        if self.n_total < 10 {
            return bad(format!("cohort size {} is too small", self.n_total));
        }
        if self.methods.iter().any(|m| m.is_multiwave()) {
            self.wave_config()?;
        } else if !(self.budget > 0.0 && self.budget < 1.0) {
            return bad(format!("budget {} outside (0, 1)", self.budget));
        }
        Ok(())
    }

    pub fn wave_config(&self) -> Result<WaveConfig> {
        WaveConfig::new(self.budget, self.pilot_ratio, self.waves)
    }

    pub fn case(&self, k: usize) -> SyntheticCase {
        let mut case = make_case(self.case_id).with_surrogates(k);
        case.n_total = self.n_total;
        case
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| SpiError::InvalidInput(format!("cannot parse experiment config: {e}")))?;
        Ok(cfg)
    }

    fn worker_count(&self, jobs: usize) -> usize {
        let auto = std::thread::available_parallelism().map_or(1, |n| n.get());
        let t = if self.threads == 0 { auto } else { self.threads };
        t.clamp(1, jobs.max(1))
    }
}

/// One method's outcome on one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub method: MethodId,
    pub case: CaseId,
    pub k: usize,
    pub rep: usize,
    /// `None` when the repetition failed after every redraw.
    pub mse: Option<f64>,
    pub converged: bool,
    pub n_labeled: usize,
    pub minority_count: usize,
    /// Wald decisions per coefficient, intercept first; empty when failed.
    pub reject: Vec<bool>,
}

/// Mean squared error over all coordinates, intercept included.
pub fn mse(beta_hat: ArrayView1<f64>, beta0: &[f64]) -> f64 {
    assert_eq!(beta_hat.len(), beta0.len(), "coefficient lengths differ");
    beta_hat
        .iter()
        .zip(beta0)
        .map(|(b, t)| (b - t).powi(2))
        .sum::<f64>()
        / beta0.len() as f64
}

fn record(
    method: MethodId,
    cfg: &ExperimentConfig,
    k: usize,
    rep: usize,
    est: &SpiEstimate,
    beta0: &[f64],
    labeled: &[usize],
    y: ArrayView1<f64>,
) -> ResultRecord {
    ResultRecord {
        method,
        case: cfg.case_id,
        k,
        rep,
        mse: Some(mse(est.coefficients.view(), beta0)),
        converged: true,
        n_labeled: labeled.len(),
        minority_count: labeled.iter().filter(|&&i| y[i] == 1.0).count(),
        reject: wald_tests(est, cfg.level).iter().map(|w| w.reject).collect(),
    }
}

fn failed_record(method: MethodId, cfg: &ExperimentConfig, k: usize, rep: usize) -> ResultRecord {
    ResultRecord {
        method,
        case: cfg.case_id,
        k,
        rep,
        mse: None,
        converged: false,
        n_labeled: 0,
        minority_count: 0,
        reject: Vec::new(),
    }
}

/// Stream key for a repetition attempt. The cohort and the shared uniform
/// sample do not depend on `K`, so different surrogate counts are compared on
/// the same covariates, outcomes and validation subjects.
fn cohort_key(cfg: &ExperimentConfig, rep: usize, attempt: u64) -> Vec<u64> {
    vec![cfg.case_id.number(), rep as u64, attempt]
}

fn method_stream(cfg: &ExperimentConfig, k: usize, rep: usize, attempt: u64, purpose: Purpose, m: MethodId) -> crate::rng::SpiRng {
    let mut key = cohort_key(cfg, rep, attempt);
    key.extend([k as u64, purpose as u64, m.code()]);
    stream(cfg.seed, &key)
}

/// Shared single-wave inputs for one cohort and uniform sample.
struct UniformSample {
    indices: Vec<usize>,
    selected: Vec<bool>,
    prob: Array1<f64>,
}

fn uniform_sample(cfg: &ExperimentConfig, n: usize, rep: usize, attempt: u64) -> UniformSample {
    let mut key = cohort_key(cfg, rep, attempt);
    key.push(Purpose::Sampling as u64);
    let selected = poisson_sample(&vec![cfg.budget; n], &vec![true; n], &mut stream(cfg.seed, &key));
    let indices = selected
        .iter()
        .enumerate()
        .filter_map(|(i, &r)| r.then_some(i))
        .collect();
    UniformSample {
        indices,
        selected,
        prob: Array1::from_elem(n, cfg.budget),
    }
}

fn try_repetition(
    cfg: &ExperimentConfig,
    case: &SyntheticCase,
    k: usize,
    rep: usize,
    attempt: u64,
) -> Result<Vec<ResultRecord>> {
    let data: SyntheticData = generate(case, cfg.seed, &cohort_key(cfg, rep, attempt))?;
    let design = data.design.view();
    let surr = data.surrogates.view();
    let full: Option<FullDataFits> = if cfg.methods.iter().any(|m| m.uses_surrogates()) {
        Some(fit_full_surrogates(design, surr, Family::Logistic)?)
    } else {
        None
    };
    let empty_full = FullDataFits {
        theta_f: Vec::new(),
        eta: ndarray::Array2::zeros((case.n_total, 0)),
    };
    let full_ref = full.as_ref().unwrap_or(&empty_full);

    let single: Vec<MethodId> = cfg.methods.iter().copied().filter(|m| !m.is_multiwave()).collect();
    let mut out = Vec::with_capacity(cfg.methods.len());
    if !single.is_empty() {
        let sample = uniform_sample(cfg, case.n_total, rep, attempt);
        let y_v = data.y.select(ndarray::Axis(0), &sample.indices);
        let no_surr = surr.slice(s![.., 0..0]);
        let mut plain = None;
        let mut firth = None;
        for &m in &single {
            let single = if m == MethodId::BaseSPI_Single {
                method_stream(cfg, k, rep, attempt, Purpose::SingleSurrogate, m).gen_range(0..k.max(1))
            } else {
                0
            };
            let (rule, subset) = m.single_wave_rule(cfg.cv_folds, single);
            let slot = if m.uses_firth() { &mut firth } else { &mut plain };
            if slot.is_none() {
                // label-only fits skip the surrogate models entirely
                let s_cols = if m.uses_firth() && full.is_some() { surr } else { no_surr };
                *slot = Some(fit_validation(
                    design,
                    s_cols,
                    &sample.indices,
                    y_v.view(),
                    sample.prob.view(),
                    Family::Logistic,
                    m.uses_firth(),
                )?);
            }
            let val = slot.as_ref().expect("fitted above");
            let input = EstimationInput {
                full: full_ref,
                validation: val,
                inclusion_prob: sample.prob.view(),
                selected: &sample.selected,
                surrogate_subset: subset.as_deref(),
            };
            let mut rng = method_stream(cfg, k, rep, attempt, Purpose::CrossValidation, m);
            let (est, _) = estimate(&input, rule, m.label(), &mut rng)?;
            out.push((m, record(m, cfg, k, rep, &est, &case.beta0, &sample.indices, data.y.view())));
        }
    }
    for &m in cfg.methods.iter().filter(|m| m.is_multiwave()) {
        let options = MultiwaveOptions {
            penalty: m.penalty().expect("multiwave methods are regularized"),
            folds: cfg.cv_folds,
            family: Family::Logistic,
            formula: cfg.inclusion_formula,
            firth: true,
        };
        let mut rng = method_stream(cfg, k, rep, attempt, Purpose::Multiwave, m);
        let y_all = data.y.to_vec();
        let res = run_multiwave(
            design,
            surr,
            full_ref,
            &y_all,
            cfg.wave_config()?,
            options,
            &RidgeRegressor::default(),
            &mut rng,
        )?;
        let idx = res.validation_indices();
        out.push((m, record(m, cfg, k, rep, &res.estimate, &case.beta0, &idx, data.y.view())));
    }
    // restore the configured method order
    let order = |m: MethodId| cfg.methods.iter().position(|&x| x == m).unwrap_or(usize::MAX);
    out.sort_by_key(|(m, _)| order(*m));
    Ok(out.into_iter().map(|(_, r)| r).collect())
}

/// All methods on one `(K, repetition)` cell, redrawing the cohort on
/// recoverable failures.
pub fn run_repetition(cfg: &ExperimentConfig, k: usize, rep: usize) -> Result<Vec<ResultRecord>> {
    let case = cfg.case(k);
    let mut attempt = 0;
    loop {
        match try_repetition(cfg, &case, k, rep, attempt) {
            Ok(records) => return Ok(records),
            Err(e) if e.is_retryable() && attempt < MAX_REDRAWS => attempt += 1,
            Err(e) if e.is_retryable() => {
                return Ok(cfg.methods.iter().map(|&m| failed_record(m, cfg, k, rep)).collect())
            }
            Err(e) => return Err(e),
        }
    }
}

/// Runs every `(K, repetition)` cell; records come back ordered by
/// `(K as configured, repetition, method as configured)` whatever the
/// number of workers.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> = cfg
        .k_values
        .iter()
        .flat_map(|&k| (0..cfg.repetitions).map(move |r| (k, r)))
        .collect();
    let slots: Vec<Mutex<Option<Result<Vec<ResultRecord>>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(k, rep)) = cells.get(i) else { break };
        let res = run_repetition(cfg, k, rep);
        *slots[i].lock().expect("result slot") = Some(res);
    };
    let workers = cfg.worker_count(cells.len());
    if workers <= 1 {
        work();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(work);
            }
        });
    }
    let mut out = Vec::with_capacity(cells.len() * cfg.methods.len());
    for slot in slots {
        out.extend(slot.into_inner().expect("result slot").expect("every cell ran")?);
    }
    Ok(out)
}

/// One single-wave method on a cohort whose labeled subjects were drawn by
/// Poisson sampling with probabilities `rho` (all `N`). With `rho = None`
/// the realized fraction `n/N` is used for everyone.
#[allow(clippy::too_many_arguments)]
pub fn fit_method<R: Rng + ?Sized>(
    design: ndarray::ArrayView2<f64>,
    surrogates: ndarray::ArrayView2<f64>,
    labels: &[Option<f64>],
    rho: Option<&[f64]>,
    method: MethodId,
    family: Family,
    folds: usize,
    rng: &mut R,
) -> Result<SpiEstimate> {
    let n = design.nrows();
    if method.is_multiwave() {
        return Err(SpiError::InvalidInput(format!(
            "{} needs the multiwave procedure (plan-wave)",
            method.label()
        )));
    }
    if labels.len() != n || surrogates.nrows() != n || rho.is_some_and(|r| r.len() != n) {
        return Err(SpiError::DimensionMismatch("cohort columns differ in length".into()));
    }
    let indices: Vec<usize> = (0..n).filter(|&i| labels[i].is_some()).collect();
    if indices.is_empty() {
        return Err(SpiError::InvalidInput("no labeled subjects".into()));
    }
    let prob = match rho {
        Some(r) => Array1::from(r.to_vec()),
        None => Array1::from_elem(n, indices.len() as f64 / n as f64),
    };
    if prob.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
        return Err(SpiError::InvalidInput("inclusion probabilities must lie in (0, 1]".into()));
    }
    let y: Array1<f64> = indices.iter().map(|&i| labels[i].expect("labeled")).collect();
    let selected: Vec<bool> = labels.iter().map(Option::is_some).collect();
    let (surr, full) = if method.uses_surrogates() {
        if surrogates.ncols() == 0 {
            return Err(SpiError::InvalidInput(format!("{} needs surrogate columns", method.label())));
        }
        (surrogates, fit_full_surrogates(design, surrogates, family)?)
    } else {
        let empty = FullDataFits {
            theta_f: Vec::new(),
            eta: ndarray::Array2::zeros((n, 0)),
        };
        (surrogates.slice_move(s![.., 0..0]), empty)
    };
    let val = fit_validation(design, surr, &indices, y.view(), prob.view(), family, method.uses_firth())?;
    let single = if method == MethodId::BaseSPI_Single {
        rng.gen_range(0..surr.ncols())
    } else {
        0
    };
    let (rule, subset) = method.single_wave_rule(folds, single);
    let input = EstimationInput {
        full: &full,
        validation: &val,
        inclusion_prob: prob.view(),
        selected: &selected,
        surrogate_subset: subset.as_deref(),
    };
    Ok(estimate(&input, rule, method.label(), rng)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseSummary {
    pub method: MethodId,
    pub k: usize,
    pub mean: f64,
    pub std_error: f64,
    pub n_converged: usize,
    pub n_failed: usize,
}

/// Mean and standard error of the MSE per `(method, K)` over converged
/// repetitions.
pub fn aggregate_mse(records: &[ResultRecord]) -> Vec<MseSummary> {
    let mut groups: BTreeMap<(MethodId, usize), (Vec<f64>, usize)> = BTreeMap::new();
    for r in records {
        let g = groups.entry((r.method, r.k)).or_default();
        match (r.converged, r.mse) {
            (true, Some(v)) => g.0.push(v),
            _ => g.1 += 1,
        }
    }
    groups
        .into_iter()
        .map(|((method, k), (vals, failed))| {
            let (mean, std_error) = mean_and_se(&vals);
            MseSummary {
                method,
                k,
                mean,
                std_error,
                n_converged: vals.len(),
                n_failed: failed,
            }
        })
        .collect()
}

/// Sample mean and its standard error (`sd/√n`, with the `n−1` divisor).
pub fn mean_and_se(vals: &[f64]) -> (f64, f64) {
    let n = vals.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionSummary {
    pub method: MethodId,
    pub k: usize,
    pub predictive: f64,
    pub non_predictive: f64,
    pub repetitions: usize,
}

/// Rejection rates over nonzero and zero true coefficients (intercept
/// excluded), averaged within each repetition and then across repetitions.
pub fn rejection_rates(records: &[ResultRecord], beta0: &[f64]) -> Vec<RejectionSummary> {
    let mask = predictive_mask(beta0);
    let mut groups: BTreeMap<(MethodId, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.converged && r.reject.len() == beta0.len()) {
        let rate = |want: bool| {
            let hits: Vec<bool> = r
                .reject
                .iter()
                .zip(&mask)
                .filter(|(_, m)| **m == Some(want))
                .map(|(&x, _)| x)
                .collect();
            if hits.is_empty() {
                f64::NAN
            } else {
                hits.iter().filter(|&&x| x).count() as f64 / hits.len() as f64
            }
        };
        let g = groups.entry((r.method, r.k)).or_default();
        g.0.push(rate(true));
        g.1.push(rate(false));
    }
    groups
        .into_iter()
        .map(|((method, k), (pred, non))| RejectionSummary {
            method,
            k,
            predictive: mean_and_se(&pred).0,
            non_predictive: mean_and_se(&non).0,
            repetitions: pred.len(),
        })
        .collect()
}

/// Mean number of labeled `y = 1` subjects per `(method, K)`.
pub fn mean_minority_count(records: &[ResultRecord]) -> BTreeMap<(MethodId, usize), f64> {
    let mut groups: BTreeMap<(MethodId, usize), Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.converged) {
        groups.entry((r.method, r.k)).or_default().push(r.minority_count as f64);
    }
    groups
        .into_iter()
        .map(|(key, v)| (key, mean_and_se(&v).0))
        .collect()
}
