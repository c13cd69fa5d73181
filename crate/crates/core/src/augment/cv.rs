use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use super::augmentation_weight;
use super::regularized::{Penalty, RegularizedProblem, SolverOptions};
use crate::error::{Result, SpiError};

pub const DEFAULT_GRID_LEN: usize = 100;
/// Smallest grid value as a fraction of the largest.
pub const GRID_RATIO: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct CvResult {
    /// Decreasing grid, `lambdas[0]` being the largest zero-solution λ.
    pub lambdas: Vec<f64>,
    /// Mean held-out weighted residual sum of squares per grid point.
    pub cv_error: Vec<f64>,
    pub chosen_index: usize,
    pub chosen_lambda: f64,
    /// Nonzero entries of each fold's fit at `lambdas[0]`.
    pub fold_active_at_top: Vec<usize>,
}

/// `len` log-spaced values from `lambda_max` down to `ratio · lambda_max`.
pub fn lambda_grid(lambda_max: f64, len: usize, ratio: f64) -> Vec<f64> {
    if len == 1 {
        return vec![lambda_max];
    }
    let step = ratio.ln() / (len - 1) as f64;
    (0..len)
        .map(|k| lambda_max * (step * k as f64).exp())
        .collect()
}

/// Fold label per row: a random permutation of the rows dealt round-robin.
pub fn cv_folds<R: Rng + ?Sized>(n: usize, folds: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut label = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        label[i] = rank % folds;
    }
    label
}

/// Selects λ by minimizing mean held-out weighted residual sum of squares.
///
/// The grid starts at the largest λ that zeroes the full fit and every fold
/// fit, and decreases log-linearly to [`GRID_RATIO`] of that value.
pub fn lambda_path_cv<R: Rng + ?Sized>(
    psi: ArrayView2<f64>,
    eta: ArrayView2<f64>,
    inclusion_prob: ArrayView1<f64>,
    penalty: Penalty,
    folds: usize,
    rng: &mut R,
) -> Result<CvResult> {
    lambda_path_cv_with(psi, eta, inclusion_prob, penalty, folds, &SolverOptions::default(), rng)
}

pub fn lambda_path_cv_with<R: Rng + ?Sized>(
    psi: ArrayView2<f64>,
    eta: ArrayView2<f64>,
    inclusion_prob: ArrayView1<f64>,
    penalty: Penalty,
    folds: usize,
    options: &SolverOptions,
    rng: &mut R,
) -> Result<CvResult> {
    let n = psi.nrows();
    if folds < 2 {
        return Err(SpiError::InvalidInput("cross-validation needs at least 2 folds".into()));
    }
    if n < folds {
        return Err(SpiError::InvalidInput(format!(
            "{n} validation rows cannot fill {folds} folds"
        )));
    }
    let labels = cv_folds(n, folds, rng);

    let full = RegularizedProblem::new(psi, eta, inclusion_prob, options.standardize)?;
    let mut fold_problems = Vec::with_capacity(folds);
    let mut top = full.lambda_max(penalty);
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| labels[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| labels[i] == f).collect();
        let prob = RegularizedProblem::new(
            psi.select(Axis(0), &train).view(),
            eta.select(Axis(0), &train).view(),
            inclusion_prob.select(Axis(0), &train).view(),
            options.standardize,
        )?;
        top = top.max(prob.lambda_max(penalty));
        fold_problems.push((prob, test));
    }

    let lambdas = lambda_grid(top, DEFAULT_GRID_LEN, GRID_RATIO);
    let mut cv_error = vec![0.0; lambdas.len()];
    let mut fold_active_at_top = Vec::with_capacity(folds);
    for (prob, test) in &fold_problems {
        let psi_t = psi.select(Axis(0), test);
        let eta_t = eta.select(Axis(0), test);
        let w_t: Array1<f64> = test
            .iter()
            .map(|&i| augmentation_weight(inclusion_prob[i]))
            .collect();
        let path = prob.path(penalty, &lambdas, options)?;
        fold_active_at_top.push(path[0].iter().filter(|&&v| v != 0.0).count());
        for (k, sol) in path.iter().enumerate() {
            let gamma = prob.unscale(sol);
            let resid = &psi_t - &eta_t.dot(&gamma.t());
            let rss: f64 = resid
                .rows()
                .into_iter()
                .zip(w_t.iter())
                .map(|(r, w)| w * r.dot(&r))
                .sum();
            cv_error[k] += rss / test.len() as f64 / folds as f64;
        }
    }

    // first minimizer, so ties resolve toward the sparser end of the grid
    let chosen_index = cv_error
        .iter()
        .enumerate()
        .fold(0, |best, (k, e)| if *e < cv_error[best] { k } else { best });
    Ok(CvResult {
        chosen_lambda: lambdas[chosen_index],
        lambdas,
        cv_error,
        chosen_index,
        fold_active_at_top,
    })
}
