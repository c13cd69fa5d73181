//! The `spi` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use super::{
    aggregate_mse, emit_results, fit_method, read_cohort_csv, rejection_rates, render_results, run_ablation,
    write_cohort_csv, ExperimentConfig, MethodId, OutputFormat,
};
use crate::augment::{wald_tests, Penalty};
use crate::datagen::{generate, make_case, CaseId};
use crate::error::{Result, SpiError};
use crate::glm::Family;
use crate::labeling::{
    cumulative_inclusion, plan_wave, InclusionFormula, LabelingState, MultiwaveOptions, RidgeRegressor, WaveConfig,
    WaveInputs,
};
use crate::pipeline::fit_full_surrogates;
use crate::rng::{stream, Purpose};

#[derive(Debug, Parser)]
#[command(name = "spi", version, about = "Surrogate-powered inference with adaptive labeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a simulation study and write one record per method and repetition.
    Simulate(SimulateArgs),
    /// Estimate coefficients on a cohort CSV.
    Fit(FitArgs),
    /// Start or advance a multiwave labeling plan.
    PlanWave(PlanWaveArgs),
    /// Write a synthetic cohort with a uniform validation sample to CSV.
    Generate(GenerateArgs),
}

fn formula(s: &str) -> std::result::Result<InclusionFormula, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "exact" => Ok(InclusionFormula::Exact),
        "as-printed" | "as_printed" => Ok(InclusionFormula::AsPrinted),
        _ => Err(format!("unknown formula `{s}` (expected exact or as-printed)")),
    }
}

fn penalty(s: &str) -> std::result::Result<Penalty, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "gl" | "group-lasso" => Ok(Penalty::GroupLasso),
        "l1" | "lasso" => Ok(Penalty::Lasso),
        _ => Err(format!("unknown penalty `{s}` (expected gl or l1)")),
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    case: Option<CaseId>,
    /// Surrogate counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Methods, comma separated (lo, lof, base-single, base-multi, spip-gl, spip-l1, spipp-gl, spipp-l1).
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<MethodId>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    pi: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    waves: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    /// Cohort size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_parser = formula)]
    formula: Option<InclusionFormula>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<OutputFormat>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    surrogate_cols: Vec<String>,
    #[arg(long, default_value = "y")]
    label_col: String,
    /// Inclusion probability column; defaults to the labeled fraction.
    #[arg(long)]
    rho_col: Option<String>,
    #[arg(long, default_value = "spip-gl")]
    method: MethodId,
    #[arg(long, default_value = "logistic")]
    family: Family,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    /// Write the estimate as JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlanWaveArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    surrogate_cols: Vec<String>,
    #[arg(long, default_value = "y")]
    label_col: String,
    /// Labeling state JSON; read unless --init, then written back.
    #[arg(long)]
    state: PathBuf,
    /// Where to write the updated state (defaults to --state).
    #[arg(long)]
    state_out: Option<PathBuf>,
    /// Draw the uniform pilot and create a fresh state.
    #[arg(long)]
    init: bool,
    #[arg(long, default_value_t = 1.0 / 30.0)]
    pi: f64,
    #[arg(long, default_value_t = 0.3)]
    kappa: f64,
    #[arg(long, default_value_t = 4)]
    waves: usize,
    #[arg(long, value_parser = formula, default_value = "exact")]
    formula: InclusionFormula,
    #[arg(long, value_parser = penalty, default_value = "gl")]
    penalty: Penalty,
    #[arg(long, default_value = "logistic")]
    family: Family,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Write the plan JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, default_value = "1")]
    case: CaseId,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 1.0 / 30.0)]
    pi: f64,
    #[arg(long, default_value_t = 4500)]
    n: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Leave every outcome unlabeled.
    #[arg(long)]
    unlabeled: bool,
    /// Also write every outcome to this CSV (one `y` column), as an annotation stand-in.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Parses and runs; returns the process exit status.
pub fn run_cli(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let res = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::PlanWave(a) => plan(a),
        Command::Generate(a) => generate_cmd(a),
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| SpiError::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| SpiError::io(p, e))?;
            ExperimentConfig::from_json(&text).map_err(|e| SpiError::format(p, e))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(v) = a.case {
        cfg.case_id = v;
    }
    if let Some(v) = a.k {
        cfg.k_values = v;
    }
    if let Some(v) = a.methods {
        cfg.methods = v;
    }
    if let Some(v) = a.reps {
        cfg.repetitions = v;
    }
    if let Some(v) = a.pi {
        cfg.budget = v;
    }
    if let Some(v) = a.kappa {
        cfg.pilot_ratio = v;
    }
    if let Some(v) = a.waves {
        cfg.waves = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.folds {
        cfg.cv_folds = v;
    }
    if let Some(v) = a.n {
        cfg.n_total = v;
    }
    if let Some(v) = a.formula {
        cfg.inclusion_formula = v;
    }
    if let Some(v) = a.threads {
        cfg.threads = v;
    }
    if a.out.is_some() {
        cfg.output.clone_from(&a.out);
    }
    match (a.format, &a.out) {
        (Some(f), _) => cfg.format = f,
        (None, Some(p)) => cfg.format = OutputFormat::from_path(p),
        (None, None) => {}
    }

    let records = run_ablation(&cfg)?;
    match &cfg.output {
        Some(p) => {
            emit_results(&records, cfg.format, p)?;
            let beta0 = make_case(cfg.case_id).beta0;
            let rates = rejection_rates(&records, &beta0);
            println!("method\tK\tmean_mse\tstd_error\tconverged\tfailed\treject_pred\treject_null");
            for (s, r) in aggregate_mse(&records).iter().zip(&rates) {
                println!(
                    "{}\t{}\t{:.6e}\t{:.3e}\t{}\t{}\t{:.3}\t{:.3}",
                    s.method.label(),
                    s.k,
                    s.mean,
                    s.std_error,
                    s.n_converged,
                    s.n_failed,
                    r.predictive,
                    r.non_predictive
                );
            }
            Ok(())
        }
        None => write_or_print(None, &render_results(&records, cfg.format)?),
    }
}

fn fit(a: FitArgs) -> Result<()> {
    let cohort = read_cohort_csv(&a.data, &a.surrogate_cols, &a.label_col, a.rho_col.as_deref())?;
    let mut rng = stream(a.seed, &[Purpose::CrossValidation as u64]);
    let est = fit_method(
        cohort.design.view(),
        cohort.surrogates.view(),
        &cohort.labels,
        cohort.rho.as_deref(),
        a.method,
        a.family,
        a.folds,
        &mut rng,
    )?;
    let names: Vec<String> = std::iter::once("(intercept)".to_string())
        .chain(cohort.covariate_names.iter().cloned())
        .collect();
    let rows: Vec<_> = wald_tests(&est, a.level)
        .iter()
        .zip(&names)
        .map(|(w, name)| {
            json!({
                "term": name,
                "estimate": w.estimate,
                "std_error": w.std_error,
                "z": w.z,
                "p_value": w.p_value,
                "reject": w.reject,
            })
        })
        .collect();
    let doc = json!({
        "method": a.method.name(),
        "family": a.family.name(),
        "n_total": cohort.n_total(),
        "n_labeled": cohort.labeled_indices().len(),
        "level": a.level,
        "coefficients": est.coefficients.to_vec(),
        "covariance": est.covariance.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
        "tests": rows,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| SpiError::InvalidInput(e.to_string()))? + "\n";
    write_or_print(a.out.as_deref(), &text)
}

fn plan(a: PlanWaveArgs) -> Result<()> {
    let cohort = read_cohort_csv(&a.data, &a.surrogate_cols, &a.label_col, None)?;
    let n = cohort.n_total();
    let state_out = a.state_out.clone().unwrap_or_else(|| a.state.clone());
    let doc = if a.init {
        let cfg = WaveConfig::new(a.pi, a.kappa, a.waves)?;
        let mut rng = stream(a.seed, &[Purpose::Multiwave as u64, 0]);
        let state = LabelingState::pilot(n, cfg, a.formula, &mut rng)?;
        state.save(&state_out)?;
        json!({
            "wave": 0,
            "threshold": null,
            "probabilities": vec![cfg.pilot_rate(); n],
            "cumulative_prob": state.cumulative_prob,
            "selected": state.labeled_indices(),
        })
    } else {
        let mut state = LabelingState::load(&a.state)?;
        if state.n_total != n {
            return Err(SpiError::DimensionMismatch(format!(
                "state covers {} subjects, data has {n}",
                state.n_total
            )));
        }
        let full = fit_full_surrogates(cohort.design.view(), cohort.surrogates.view(), a.family)?;
        let options = MultiwaveOptions {
            penalty: a.penalty,
            folds: a.folds,
            family: a.family,
            formula: state.formula,
            firth: a.family == Family::Logistic,
        };
        let regressor = RidgeRegressor::default();
        let inputs = WaveInputs {
            design: cohort.design.view(),
            surrogates: cohort.surrogates.view(),
            full: &full,
            labels: &cohort.labels,
            options,
            regressor: &regressor,
        };
        let mut rng = stream(a.seed, &[Purpose::Multiwave as u64, state.wave_index as u64 + 1]);
        let plan = plan_wave(&mut state, &inputs, &mut rng)?;
        state.save(&state_out)?;
        let cumulative = cumulative_inclusion(&state, &state.config);
        json!({
            "wave": plan.wave,
            "threshold": plan.threshold,
            "probabilities": plan.rule_values,
            "cumulative_prob": cumulative,
            "selected": plan.selected,
            "reused_model": plan.reused_model,
            "uniform_fallback": plan.uniform_fallback,
        })
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| SpiError::InvalidInput(e.to_string()))? + "\n";
    write_or_print(a.out.as_deref(), &text)
}

fn generate_cmd(a: GenerateArgs) -> Result<()> {
    if !(a.pi > 0.0 && a.pi <= 1.0) {
        return Err(SpiError::InvalidInput(format!("pi {} outside (0, 1]", a.pi)));
    }
    let mut case = make_case(a.case).with_surrogates(a.k);
    case.n_total = a.n;
    let data = generate(&case, a.seed, &[a.case.number()])?;
    let labels: Vec<Option<f64>> = if a.unlabeled {
        vec![None; a.n]
    } else {
        let mut rng = stream(a.seed, &[a.case.number(), Purpose::Sampling as u64]);
        let picked = crate::labeling::poisson_sample(&vec![a.pi; a.n], &vec![true; a.n], &mut rng);
        picked.iter().zip(&data.y).map(|(&p, &y)| p.then_some(y)).collect()
    };
    let rho = (!a.unlabeled).then(|| vec![a.pi; a.n]);
    write_cohort_csv(&a.out, data.covariates(), data.surrogates.view(), &labels, rho.as_deref())?;
    if let Some(t) = &a.truth {
        let text: String = std::iter::once("y\n".to_string())
            .chain(data.y.iter().map(|v| format!("{v}\n")))
            .collect();
        std::fs::write(t, text).map_err(|e| SpiError::io(t, e))?;
    }
    Ok(())
}
