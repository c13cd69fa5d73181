use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rule::{solve_budget_threshold, Threshold};
use super::sampling::poisson_sample;
use super::sigma::{fit_sigma_model, predict_sigma, sigma_features, RidgeRegressor, SigmaModel, SigmaRegressor};
use super::state::{InclusionFormula, LabelingState};
use super::WaveConfig;
use crate::augment::{gamma_regularized_cv, GammaEstimate, Penalty, SpiEstimate};
use crate::error::{Result, SpiError};
use crate::glm::Family;
use crate::pipeline::{estimate, fit_full_surrogates, fit_validation, EstimationInput, FullDataFits, GammaRule};

/// Source of validated labels. Repeated queries for a subject must agree.
pub trait LabelOracle {
    fn label(&self, index: usize) -> Result<f64>;
}

impl LabelOracle for [f64] {
    fn label(&self, index: usize) -> Result<f64> {
        self.get(index)
            .copied()
            .ok_or_else(|| SpiError::InvalidInput(format!("no label for subject {index}")))
    }
}

impl LabelOracle for Vec<f64> {
    fn label(&self, index: usize) -> Result<f64> {
        self.as_slice().label(index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiwaveOptions {
    pub penalty: Penalty,
    pub folds: usize,
    pub family: Family,
    pub formula: InclusionFormula,
    /// Firth's correction for the validation fits.
    pub firth: bool,
}

impl Default for MultiwaveOptions {
    fn default() -> Self {
        Self {
            penalty: Penalty::GroupLasso,
            folds: 5,
            family: Family::Logistic,
            formula: InclusionFormula::Exact,
            firth: true,
        }
    }
}

impl MultiwaveOptions {
    pub fn label(&self) -> &'static str {
        match self.penalty {
            Penalty::GroupLasso => "SPI++(GL)",
            Penalty::Lasso => "SPI++(L1)",
        }
    }
}

/// Cohort-level inputs shared by every wave.
pub struct WaveInputs<'a> {
    /// `N × p` design with intercept.
    pub design: ArrayView2<'a, f64>,
    pub surrogates: ArrayView2<'a, f64>,
    pub full: &'a FullDataFits,
    /// Validated outcomes; must be present for every labeled subject.
    pub labels: &'a [Option<f64>],
    pub options: MultiwaveOptions,
    pub regressor: &'a dyn SigmaRegressor,
}

/// What one adaptive wave decided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavePlan {
    /// 1-based wave number.
    pub wave: usize,
    pub rule_values: Vec<f64>,
    pub threshold: Option<f64>,
    pub selected: Vec<usize>,
    /// The wave's fits failed and the previous σ model was reused.
    pub reused_model: bool,
    /// No σ model was available, so the wave sampled uniformly.
    pub uniform_fallback: bool,
}

/// Labeled indices (ascending) and their outcomes.
fn labeled_outcomes(state: &LabelingState, labels: &[Option<f64>]) -> Result<(Vec<usize>, Array1<f64>)> {
    if labels.len() != state.n_total {
        return Err(SpiError::DimensionMismatch(format!(
            "{} labels for a cohort of {}",
            labels.len(),
            state.n_total
        )));
    }
    let idx = state.labeled_indices();
    let y = idx
        .iter()
        .map(|&i| labels[i].ok_or_else(|| SpiError::InvalidInput(format!("subject {i} was selected but has no label"))))
        .collect::<Result<Array1<f64>>>()?;
    Ok((idx, y))
}

fn wave_sigma_model<R: Rng + ?Sized>(
    inp: &WaveInputs<'_>,
    idx: &[usize],
    y: ArrayView1<f64>,
    rho: ArrayView1<f64>,
    rng: &mut R,
) -> Result<SigmaModel> {
    let opts = inp.options;
    let val = fit_validation(inp.design, inp.surrogates, idx, y, rho, opts.family, opts.firth)?;
    let eta_v = inp.full.eta.select(Axis(0), idx);
    let rho_v = rho.select(Axis(0), idx);
    let (gamma, _) = gamma_regularized_cv(val.psi.view(), eta_v.view(), rho_v.view(), opts.penalty, opts.folds, rng)?;
    let feats = sigma_features(inp.design.select(Axis(0), idx).view(), inp.surrogates.select(Axis(0), idx).view());
    fit_sigma_model(feats.view(), val.psi.view(), eta_v.view(), &gamma, inp.regressor)
}

/// Runs one adaptive wave: refit under the current weights, estimate σ,
/// solve the threshold among unlabeled subjects, sample and record.
pub fn plan_wave<R: Rng + ?Sized>(state: &mut LabelingState, inp: &WaveInputs<'_>, rng: &mut R) -> Result<WavePlan> {
    let cfg = state.config;
    if !cfg.has_adaptive_waves() || state.wave_index >= cfg.waves {
        return Err(SpiError::InvalidInput(format!(
            "all {} adaptive waves are complete",
            cfg.waves
        )));
    }
    if inp.design.nrows() != state.n_total || inp.surrogates.nrows() != state.n_total {
        return Err(SpiError::DimensionMismatch("cohort size differs from the labeling state".into()));
    }
    let n = state.n_total;
    let (idx, y) = labeled_outcomes(state, inp.labels)?;
    let rho = Array1::from(state.weights_prob());

    let mut reused_model = false;
    let model = match wave_sigma_model(inp, &idx, y.view(), rho.view(), rng) {
        Ok(m) => Some(m),
        Err(e) if e.is_retryable() => {
            reused_model = state.sigma_model.is_some();
            state.sigma_model.clone()
        }
        Err(e) => return Err(e),
    };
    let uniform_fallback = model.is_none();

    // a constant σ makes the rule uniform over eligible subjects
    let sigmas: Vec<f64> = match &model {
        Some(m) => {
            let feats = sigma_features(inp.design, inp.surrogates);
            feats
                .rows()
                .into_iter()
                .map(|r| predict_sigma(m, r, cfg.sigma_floor))
                .collect()
        }
        None => vec![1.0; n],
    };
    let eligible: Vec<bool> = state.labeled().iter().map(|&l| !l).collect();
    let threshold = match solve_budget_threshold(&sigmas, &eligible, cfg.wave_target()) {
        Ok(t) => t,
        // nobody left to label
        Err(SpiError::BudgetInfeasible) => Threshold::Infeasible,
        Err(e) => return Err(e),
    };
    let rule_values: Vec<f64> = sigmas.iter().map(|&s| threshold.rho(s)).collect();
    let selected = poisson_sample(&rule_values, &eligible, rng);
    let picked: Vec<usize> = selected
        .iter()
        .enumerate()
        .filter_map(|(i, &r)| r.then_some(i))
        .collect();

    if let Some(m) = model {
        state.sigma_model = Some(m);
    }
    state.record_wave(rule_values.clone(), threshold.value(), selected, sigmas)?;
    Ok(WavePlan {
        wave: state.wave_index,
        rule_values,
        threshold: threshold.value(),
        selected: picked,
        reused_model,
        uniform_fallback,
    })
}

#[derive(Debug, Clone)]
pub struct MultiwaveOutcome {
    pub estimate: SpiEstimate,
    pub gamma: GammaEstimate,
    pub state: LabelingState,
    pub labels: Vec<Option<f64>>,
    pub plans: Vec<WavePlan>,
}

impl MultiwaveOutcome {
    pub fn validation_indices(&self) -> Vec<usize> {
        self.state.labeled_indices()
    }
}

fn query<O: LabelOracle + ?Sized>(oracle: &O, picked: &[usize], labels: &mut [Option<f64>]) -> Result<()> {
    for &i in picked {
        labels[i] = Some(oracle.label(i)?);
    }
    Ok(())
}

/// Pilot, adaptive waves and the final augmented estimate, given the
/// full-data surrogate fits.
#[allow(clippy::too_many_arguments)]
pub fn run_multiwave<O: LabelOracle + ?Sized, R: Rng + ?Sized>(
    design: ArrayView2<f64>,
    surrogates: ArrayView2<f64>,
    full: &FullDataFits,
    oracle: &O,
    config: WaveConfig,
    options: MultiwaveOptions,
    regressor: &dyn SigmaRegressor,
    rng: &mut R,
) -> Result<MultiwaveOutcome> {
    let n = design.nrows();
    let mut state = LabelingState::pilot(n, config, options.formula, rng)?;
    let mut labels = vec![None; n];
    query(oracle, &state.labeled_indices(), &mut labels)?;

    let mut plans = Vec::new();
    if config.has_adaptive_waves() {
        for _ in 0..config.waves {
            let plan = {
                let inp = WaveInputs {
                    design: design.view(),
                    surrogates: surrogates.view(),
                    full,
                    labels: &labels,
                    options,
                    regressor,
                };
                plan_wave(&mut state, &inp, rng)?
            };
            query(oracle, &plan.selected, &mut labels)?;
            plans.push(plan);
        }
    }

    let (idx, y) = labeled_outcomes(&state, &labels)?;
    let rho = Array1::from(state.weights_prob());
    let val = fit_validation(design, surrogates, &idx, y.view(), rho.view(), options.family, options.firth)?;
    let selected = state.labeled();
    let input = EstimationInput {
        full,
        validation: &val,
        inclusion_prob: rho.view(),
        selected: &selected,
        surrogate_subset: None,
    };
    let rule = GammaRule::Regularized {
        penalty: options.penalty,
        folds: options.folds,
    };
    let (estimate, gamma) = estimate(&input, rule, options.label(), rng)?;
    Ok(MultiwaveOutcome {
        estimate,
        gamma,
        state,
        labels,
        plans,
    })
}

/// The full adaptive procedure on an unlabeled cohort, with the default
/// ridge σ model.
pub fn run_spi_plus_plus<O: LabelOracle + ?Sized, R: Rng + ?Sized>(
    design: ArrayView2<f64>,
    surrogates: ArrayView2<f64>,
    oracle: &O,
    config: WaveConfig,
    options: MultiwaveOptions,
    rng: &mut R,
) -> Result<MultiwaveOutcome> {
    let full = fit_full_surrogates(design, surrogates, options.family)?;
    run_multiwave(
        design,
        surrogates,
        &full,
        oracle,
        config,
        options,
        &RidgeRegressor::default(),
        rng,
    )
}
