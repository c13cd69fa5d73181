use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cv::{lambda_path_cv_with, CvResult};
use super::{augmentation_weight, GammaEstimate, GammaMethod};
use crate::error::{Result, SpiError};
use crate::numerics::{all_finite, soft_threshold, weighted_cross, weighted_gram, Cholesky};

/// Group-lasso sweep iterates combined per extrapolation attempt.
const ANDERSON_DEPTH: usize = 8;
/// Sweeps between exact lasso steps on the current support.
const LASSO_STEP_EVERY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    /// Entrywise `λ Σ |t_lj|`.
    Lasso,
    /// Columnwise `λ Σ ‖t_j‖`.
    GroupLasso,
}

impl Penalty {
    pub fn method(self) -> GammaMethod {
        match self {
            Penalty::Lasso => GammaMethod::Lasso,
            Penalty::GroupLasso => GammaMethod::GroupLasso,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Converged when the largest coefficient change in a sweep is at most this.
    pub tolerance: f64,
    pub max_sweeps: usize,
    /// Rescale η columns to unit weighted second moment before solving.
    pub standardize: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-7,
            max_sweeps: 10_000,
            standardize: true,
        }
    }
}

/// Weighted multi-response least squares in Gram form:
///
/// `½ tr(Γ G Γᵀ) − tr(C Γᵀ) + λ Ω(Γ)` with `G = (1/n) Σ w_i η_i η_iᵀ`,
/// `C = (1/n) Σ w_i ψ_i η_iᵀ` and `w_i = (1 − ρ_i)/ρ_i²`.
///
/// When standardized, `G` and `C` are stored for the rescaled columns
/// `η_ij / s_j` and solutions live on that scale until [`Self::unscale`].
#[derive(Debug, Clone)]
pub struct RegularizedProblem {
    gram: Array2<f64>,
    cross: Array2<f64>,
    scales: Array1<f64>,
    n_rows: usize,
}

impl RegularizedProblem {
    pub fn new(
        psi: ArrayView2<f64>,
        eta: ArrayView2<f64>,
        rho: ArrayView1<f64>,
        standardize: bool,
    ) -> Result<Self> {
        let n = psi.nrows();
        if eta.nrows() != n || rho.len() != n {
            return Err(SpiError::DimensionMismatch(format!(
                "psi has {} rows, eta {}, rho {}",
                n,
                eta.nrows(),
                rho.len()
            )));
        }
        if n == 0 {
            return Err(SpiError::InvalidInput("no validation rows".into()));
        }
        let w = rho.mapv(augmentation_weight);
        let inv_n = 1.0 / n as f64;
        let mut gram = weighted_gram(eta, w.view()) * inv_n;
        let mut cross = weighted_cross(psi, eta, w.view()) * inv_n;
        let q = eta.ncols();
        let scales = Array1::from_shape_fn(q, |j| {
            let d = gram[[j, j]];
            if standardize && d > 0.0 {
                d.sqrt()
            } else {
                1.0
            }
        });
        if standardize {
            for a in 0..q {
                for b in 0..q {
                    gram[[a, b]] /= scales[a] * scales[b];
                }
                cross.column_mut(a).mapv_inplace(|v| v / scales[a]);
            }
        }
        Ok(Self {
            gram,
            cross,
            scales,
            n_rows: n,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_responses(&self) -> usize {
        self.cross.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.cross.ncols()
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    pub fn cross(&self) -> &Array2<f64> {
        &self.cross
    }

    /// Smallest λ whose solution is identically zero.
    pub fn lambda_max(&self, penalty: Penalty) -> f64 {
        match penalty {
            Penalty::Lasso => self.cross.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
            Penalty::GroupLasso => self
                .cross
                .columns()
                .into_iter()
                .map(|c| c.dot(&c).sqrt())
                .fold(0.0_f64, f64::max),
        }
    }

    /// Maps a solution on the solver's scale back to the original η scale.
    pub fn unscale(&self, gamma: &Array2<f64>) -> Array2<f64> {
        let mut out = gamma.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v / self.scales[j]);
        }
        out
    }

    /// Negative gradient of the smooth part, `C − Γ G`.
    pub fn residual_gradient(&self, gamma: &Array2<f64>) -> Array2<f64> {
        &self.cross - &gamma.dot(&self.gram)
    }

    /// Penalized objective up to the constant `(1/2n) Σ w_i ‖ψ_i‖²`.
    pub fn objective(&self, penalty: Penalty, lambda: f64, gamma: &Array2<f64>) -> f64 {
        self.objective_with(penalty, lambda, gamma, &gamma.dot(&self.gram))
    }

    /// Largest violation of the optimality conditions at `gamma`.
    pub fn kkt_violation(&self, penalty: Penalty, lambda: f64, gamma: &Array2<f64>) -> f64 {
        let grad = self.residual_gradient(gamma);
        let mut worst = 0.0_f64;
        match penalty {
            Penalty::Lasso => {
                for (g, t) in grad.iter().zip(gamma.iter()) {
                    let v = if *t == 0.0 {
                        (g.abs() - lambda).max(0.0)
                    } else {
                        (g - lambda * t.signum()).abs()
                    };
                    worst = worst.max(v);
                }
            }
            Penalty::GroupLasso => {
                for (g, t) in grad.columns().into_iter().zip(gamma.columns()) {
                    let tn = t.dot(&t).sqrt();
                    let v = if tn == 0.0 {
                        (g.dot(&g).sqrt() - lambda).max(0.0)
                    } else {
                        let d = &g - &t.mapv(|x| lambda * x / tn);
                        d.dot(&d).sqrt()
                    };
                    worst = worst.max(v);
                }
            }
        }
        worst
    }

    /// Cyclic coordinate descent from `warm` (or zero). Returns the solution on
    /// the solver's scale and the number of sweeps used.
    pub fn solve(
        &self,
        penalty: Penalty,
        lambda: f64,
        warm: Option<&Array2<f64>>,
        options: &SolverOptions,
    ) -> Result<(Array2<f64>, usize)> {
        if !(lambda >= 0.0) {
            return Err(SpiError::InvalidInput("lambda must be nonnegative".into()));
        }
        let p = self.n_responses();
        let q = self.n_features();
        let mut gamma = match warm {
            Some(w) if w.dim() == (p, q) => w.as_standard_layout().into_owned(),
            Some(w) => {
                return Err(SpiError::DimensionMismatch(format!(
                    "warm start is {:?}, expected ({p}, {q})",
                    w.dim()
                )))
            }
            None => Array2::zeros((p, q)),
        };
        // running product Γ G
        let mut prod = gamma.dot(&self.gram);
        let mut sweeps = 0;
        let mut full_sweep = true;
        let mut history = Vec::with_capacity(ANDERSON_DEPTH + 1);
        loop {
            if sweeps >= options.max_sweeps {
                return Err(SpiError::NoConvergence {
                    iterations: sweeps,
                    score_norm: f64::NAN,
                });
            }
            sweeps += 1;
            let delta = match penalty {
                Penalty::Lasso => self.lasso_sweep(&mut gamma, &mut prod, lambda, full_sweep),
                Penalty::GroupLasso => self.group_sweep(&mut gamma, &mut prod, lambda, full_sweep),
            };
            if delta <= options.tolerance {
                if full_sweep {
                    break;
                }
                // active set settled; confirm with a pass over every coordinate
                full_sweep = true;
            } else {
                full_sweep = false;
                match penalty {
                    Penalty::GroupLasso => {
                        history.push(gamma.clone());
                        if history.len() > ANDERSON_DEPTH {
                            self.extrapolate(&history, &mut gamma, &mut prod, lambda);
                            history.clear();
                        }
                    }
                    Penalty::Lasso => {
                        if sweeps == 2 || sweeps % LASSO_STEP_EVERY == 0 {
                            self.lasso_active_step(lambda, &mut gamma, &mut prod);
                        }
                    }
                }
            }
        }
        Ok((gamma, sweeps))
    }

    fn penalty_value(penalty: Penalty, gamma: &Array2<f64>) -> f64 {
        match penalty {
            Penalty::Lasso => gamma.iter().map(|v| v.abs()).sum::<f64>(),
            Penalty::GroupLasso => gamma
                .columns()
                .into_iter()
                .map(|c| c.dot(&c).sqrt())
                .sum::<f64>(),
        }
    }

    /// Objective from a precomputed `Γ G`.
    fn objective_with(&self, penalty: Penalty, lambda: f64, gamma: &Array2<f64>, prod: &Array2<f64>) -> f64 {
        let quad: f64 = gamma
            .iter()
            .zip(prod.iter())
            .zip(self.cross.iter())
            .map(|((g, p), c)| g * (0.5 * p - c))
            .sum();
        quad + lambda * Self::penalty_value(penalty, gamma)
    }

    /// Anderson extrapolation of consecutive group-lasso sweep iterates,
    /// kept only if it lowers the objective.
    ///
    /// Cyclic sweeps crawl when columns are strongly correlated; the
    /// coordinate sweeps still decide convergence.
    fn extrapolate(&self, history: &[Array2<f64>], gamma: &mut Array2<f64>, prod: &mut Array2<f64>, lambda: f64) {
        let flat: Vec<ArrayView1<f64>> = history
            .iter()
            .map(|h| h.view().into_shape_with_order(h.len()).expect("standard layout"))
            .collect();
        let Some(weights) = anderson_weights(&flat) else { return };
        let mut cand = Array2::<f64>::zeros(gamma.raw_dim());
        for (c, x) in weights.iter().zip(&history[1..]) {
            cand.scaled_add(*c, x);
        }
        let cand_prod = cand.dot(&self.gram);
        let pen = Penalty::GroupLasso;
        if self.objective_with(pen, lambda, &cand, &cand_prod) < self.objective_with(pen, lambda, gamma, prod) {
            *gamma = cand;
            *prod = cand_prod;
        }
    }

    /// Moves each response row toward the exact minimizer on its current
    /// support and signs, stopping where the first coefficient reaches zero.
    /// The objective is convex along that segment and decreasing up to the
    /// stop, so the step never increases it.
    fn lasso_active_step(&self, lambda: f64, gamma: &mut Array2<f64>, prod: &mut Array2<f64>) {
        let (p, q) = gamma.dim();
        for l in 0..p {
            let act: Vec<usize> = (0..q).filter(|&j| gamma[[l, j]] != 0.0).collect();
            if act.is_empty() {
                continue;
            }
            let g_aa = self.gram.select(Axis(0), &act).select(Axis(1), &act);
            let Ok(chol) = Cholesky::new(g_aa.view()) else { continue };
            let old: Array1<f64> = act.iter().map(|&j| gamma[[l, j]]).collect();
            let rhs: Array1<f64> = act
                .iter()
                .zip(&old)
                .map(|(&j, o)| self.cross[[l, j]] - lambda * o.signum())
                .collect();
            let target = chol.solve_vec(rhs.view());
            if !all_finite(target.iter()) {
                continue;
            }
            let mut t = 1.0_f64;
            let mut hit = None;
            for (k, (&o, &x)) in old.iter().zip(target.iter()).enumerate() {
                if o * x < 0.0 {
                    let tk = o / (o - x);
                    if tk < t {
                        t = tk;
                        hit = Some(k);
                    }
                }
            }
            for (k, &j) in act.iter().enumerate() {
                gamma[[l, j]] = if Some(k) == hit {
                    0.0
                } else {
                    old[k] + t * (target[k] - old[k])
                };
            }
            prod.row_mut(l).assign(&gamma.row(l).dot(&self.gram));
        }
    }

    fn lasso_sweep(
        &self,
        gamma: &mut Array2<f64>,
        prod: &mut Array2<f64>,
        lambda: f64,
        full: bool,
    ) -> f64 {
        let (p, q) = gamma.dim();
        let gram = self.gram.as_slice().expect("standard layout");
        let cross = self.cross.as_slice().expect("standard layout");
        let g_s = gamma.as_slice_mut().expect("standard layout");
        let p_s = prod.as_slice_mut().expect("standard layout");
        let mut max_delta = 0.0_f64;
        for j in 0..q {
            let gjj = gram[j * q + j];
            if gjj <= 0.0 {
                continue;
            }
            let grow = &gram[j * q..(j + 1) * q];
            for l in 0..p {
                let old = g_s[l * q + j];
                if !full && old == 0.0 {
                    continue;
                }
                let g = cross[l * q + j] - p_s[l * q + j] + old * gjj;
                let new = soft_threshold(g, lambda) / gjj;
                let d = new - old;
                if d != 0.0 {
                    g_s[l * q + j] = new;
                    for (pv, gv) in p_s[l * q..(l + 1) * q].iter_mut().zip(grow) {
                        *pv += d * gv;
                    }
                    max_delta = max_delta.max(d.abs());
                }
            }
        }
        max_delta
    }

    fn group_sweep(
        &self,
        gamma: &mut Array2<f64>,
        prod: &mut Array2<f64>,
        lambda: f64,
        full: bool,
    ) -> f64 {
        let (p, q) = gamma.dim();
        let gram = self.gram.as_slice().expect("standard layout");
        let cross = self.cross.as_slice().expect("standard layout");
        let g_s = gamma.as_slice_mut().expect("standard layout");
        let p_s = prod.as_slice_mut().expect("standard layout");
        let mut grad = vec![0.0; p];
        let mut max_delta = 0.0_f64;
        for j in 0..q {
            let gjj = gram[j * q + j];
            if gjj <= 0.0 {
                continue;
            }
            if !full && (0..p).all(|l| g_s[l * q + j] == 0.0) {
                continue;
            }
            for l in 0..p {
                grad[l] = cross[l * q + j] - p_s[l * q + j] + g_s[l * q + j] * gjj;
            }
            let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
            let shrink = if norm > lambda { (1.0 - lambda / norm) / gjj } else { 0.0 };
            let grow = &gram[j * q..(j + 1) * q];
            for l in 0..p {
                let old = g_s[l * q + j];
                let d = grad[l] * shrink - old;
                if d != 0.0 {
                    g_s[l * q + j] = old + d;
                    for (pv, gv) in p_s[l * q..(l + 1) * q].iter_mut().zip(grow) {
                        *pv += d * gv;
                    }
                    max_delta = max_delta.max(d.abs());
                }
            }
        }
        max_delta
    }

    /// Warm-started solutions along `lambdas` (expected in decreasing order),
    /// on the solver's scale.
    pub fn path(
        &self,
        penalty: Penalty,
        lambdas: &[f64],
        options: &SolverOptions,
    ) -> Result<Vec<Array2<f64>>> {
        let mut out: Vec<Array2<f64>> = Vec::with_capacity(lambdas.len());
        for (k, &lambda) in lambdas.iter().enumerate() {
            let warm = match k {
                0 => None,
                1 => Some(out[0].clone()),
                _ => Some(self.predicted_start(
                    penalty,
                    [lambdas[k - 2], lambdas[k - 1], lambda],
                    &out[k - 2],
                    &out[k - 1],
                )),
            };
            let (sol, _) = self.solve(penalty, lambda, warm.as_ref(), options)?;
            out.push(sol);
        }
        Ok(out)
    }

    /// Warm start for the next grid point: the previous solution, or its
    /// linear extrapolation in log λ on the same support when that has the
    /// lower objective.
    fn predicted_start(
        &self,
        penalty: Penalty,
        lambdas: [f64; 3],
        older: &Array2<f64>,
        last: &Array2<f64>,
    ) -> Array2<f64> {
        let span = (lambdas[1] / lambdas[0]).ln();
        if !(span.abs() > 0.0) {
            return last.clone();
        }
        let step = (lambdas[2] / lambdas[1]).ln() / span;
        let mut cand = last + &((last - older) * step);
        match penalty {
            Penalty::Lasso => cand.zip_mut_with(last, |c, &l| {
                if l == 0.0 {
                    *c = 0.0;
                }
            }),
            Penalty::GroupLasso => {
                for (mut c, l) in cand.columns_mut().into_iter().zip(last.columns()) {
                    if l.iter().all(|&v| v == 0.0) {
                        c.fill(0.0);
                    }
                }
            }
        }
        if self.objective(penalty, lambdas[2], &cand) < self.objective(penalty, lambdas[2], last) {
            cand
        } else {
            last.clone()
        }
    }
}

/// Penalized estimate of `Γ` at a fixed λ. All arguments cover the validation
/// rows only.
pub fn gamma_regularized(
    psi: ArrayView2<f64>,
    eta: ArrayView2<f64>,
    inclusion_prob: ArrayView1<f64>,
    penalty: Penalty,
    lambda: f64,
) -> Result<GammaEstimate> {
    gamma_regularized_with(psi, eta, inclusion_prob, penalty, lambda, &SolverOptions::default())
}

pub fn gamma_regularized_with(
    psi: ArrayView2<f64>,
    eta: ArrayView2<f64>,
    inclusion_prob: ArrayView1<f64>,
    penalty: Penalty,
    lambda: f64,
    options: &SolverOptions,
) -> Result<GammaEstimate> {
    let problem = RegularizedProblem::new(psi, eta, inclusion_prob, options.standardize)?;
    let lmax = problem.lambda_max(penalty);
    // approach small λ along a short warm-started path; cold starts at tiny λ
    // are slow on correlated columns
    let mut warm: Option<Array2<f64>> = None;
    if lambda < lmax {
        let mut l = lmax;
        while l * 0.5 > lambda {
            l *= 0.5;
            warm = Some(problem.solve(penalty, l, warm.as_ref(), options)?.0);
        }
    }
    let (sol, _) = problem.solve(penalty, lambda, warm.as_ref(), options)?;
    Ok(GammaEstimate::new(problem.unscale(&sol), penalty.method(), lambda))
}

/// Penalized estimate with λ chosen by K-fold cross-validation.
pub fn gamma_regularized_cv<R: Rng + ?Sized>(
    psi: ArrayView2<f64>,
    eta: ArrayView2<f64>,
    inclusion_prob: ArrayView1<f64>,
    penalty: Penalty,
    folds: usize,
    rng: &mut R,
) -> Result<(GammaEstimate, CvResult)> {
    gamma_regularized_cv_with(psi, eta, inclusion_prob, penalty, folds, &SolverOptions::default(), rng)
}

pub fn gamma_regularized_cv_with<R: Rng + ?Sized>(
    psi: ArrayView2<f64>,
    eta: ArrayView2<f64>,
    inclusion_prob: ArrayView1<f64>,
    penalty: Penalty,
    folds: usize,
    options: &SolverOptions,
    rng: &mut R,
) -> Result<(GammaEstimate, CvResult)> {
    let cv = lambda_path_cv_with(psi, eta, inclusion_prob, penalty, folds, options, rng)?;
    let problem = RegularizedProblem::new(psi, eta, inclusion_prob, options.standardize)?;
    let path = problem.path(penalty, &cv.lambdas[..=cv.chosen_index], options)?;
    let sol = path.last().expect("grid is nonempty");
    Ok((
        GammaEstimate::new(problem.unscale(sol), penalty.method(), cv.chosen_lambda),
        cv,
    ))
}

/// Affine weights minimizing the norm of the combined successive
/// differences of `iterates`; they apply to `iterates[1..]`.
fn anderson_weights(iterates: &[ArrayView1<f64>]) -> Option<Array1<f64>> {
    let m = iterates.len() - 1;
    let diffs: Vec<Array1<f64>> = iterates.windows(2).map(|w| &w[1] - &w[0]).collect();
    let mut uu = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        for j in 0..=i {
            let v = diffs[i].dot(&diffs[j]);
            uu[[i, j]] = v;
            uu[[j, i]] = v;
        }
    }
    let scale = uu.diag().sum() / m as f64;
    if !(scale > 0.0) {
        return None;
    }
    for i in 0..m {
        uu[[i, i]] += 1e-10 * scale;
    }
    let z = Cholesky::new(uu.view()).ok()?.solve_vec(Array1::ones(m).view());
    let total = z.sum();
    if !(total.abs() > 0.0) || !all_finite(z.iter()) {
        return None;
    }
    Some(z / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noisy_fixture(n: usize, p: usize, q: usize, seed: u64) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eta = Array2::from_shape_fn((n, q), |_| StandardNormal.sample(&mut rng));
        let truth = Array2::from_shape_fn((p, q), |(l, j)| if j < 2 { 0.8 - 0.3 * l as f64 } else { 0.0 });
        let noise = Array2::from_shape_fn((n, p), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.5 * z
        });
        let psi = eta.dot(&truth.t()) + noise;
        let rho = Array1::from_shape_fn(n, |i| 0.2 + 0.3 * ((i % 5) as f64 / 4.0));
        (psi, eta, rho)
    }

    #[test]
    fn lambda_max_gives_zero() {
        let (psi, eta, rho) = noisy_fixture(60, 3, 6, 1);
        let prob = RegularizedProblem::new(psi.view(), eta.view(), rho.view(), true).unwrap();
        for pen in [Penalty::Lasso, Penalty::GroupLasso] {
            let lmax = prob.lambda_max(pen);
            let (sol, _) = prob.solve(pen, lmax, None, &SolverOptions::default()).unwrap();
            assert!(sol.iter().all(|&v| v == 0.0));
            let g = gamma_regularized(psi.view(), eta.view(), rho.view(), pen, lmax * 1.5).unwrap();
            assert_eq!(g.active_entries, 0);
        }
    }

    #[test]
    fn kkt_holds_along_path() {
        let (psi, eta, rho) = noisy_fixture(80, 4, 8, 2);
        let opts = SolverOptions::default();
        for standardize in [true, false] {
            let prob = RegularizedProblem::new(psi.view(), eta.view(), rho.view(), standardize).unwrap();
            for pen in [Penalty::Lasso, Penalty::GroupLasso] {
                let lmax = prob.lambda_max(pen);
                let lambdas: Vec<f64> = (0..20).map(|k| lmax * 0.7f64.powi(k)).collect();
                let path = prob.path(pen, &lambdas, &opts).unwrap();
                for (l, sol) in lambdas.iter().zip(&path) {
                    assert!(prob.kkt_violation(pen, *l, sol) < 1e-6);
                }
            }
        }
    }

    #[test]
    fn objective_not_above_perturbations() {
        let (psi, eta, rho) = noisy_fixture(50, 2, 5, 3);
        let prob = RegularizedProblem::new(psi.view(), eta.view(), rho.view(), true).unwrap();
        for pen in [Penalty::Lasso, Penalty::GroupLasso] {
            let lambda = 0.2 * prob.lambda_max(pen);
            let (sol, _) = prob.solve(pen, lambda, None, &SolverOptions::default()).unwrap();
            let f0 = prob.objective(pen, lambda, &sol);
            for (k, eps) in [1e-3, -1e-3, 5e-2].iter().enumerate() {
                let mut pert = sol.clone();
                pert[[k % 2, (k * 3) % 5]] += eps;
                assert!(prob.objective(pen, lambda, &pert) >= f0 - 1e-12);
            }
        }
    }
}
