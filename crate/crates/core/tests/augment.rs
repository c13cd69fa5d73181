use ndarray::{array, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use spi::augment::*;
use spi::glm::{fit_weighted_glm, Family, FitResult};

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// `ψ = η Γ*ᵀ + noise`.
fn planted(seed: u64, n: usize, gamma: &Array2<f64>, noise: f64) -> (Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eta = gaussian(&mut rng, n, gamma.ncols());
    let psi = eta.dot(&gamma.t()) + gaussian(&mut rng, n, gamma.nrows()) * noise;
    (psi, eta)
}

fn varying_rho(n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |i| 0.2 + 0.6 * ((i * 37) % 101) as f64 / 100.0)
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = Array2::<f64>::eye(n);
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| m[[i, c]].abs().partial_cmp(&m[[j, c]].abs()).unwrap())
            .unwrap();
        for k in 0..n {
            m.swap([c, k], [piv, k]);
            inv.swap([c, k], [piv, k]);
        }
        let d = m[[c, c]];
        for k in 0..n {
            m[[c, k]] /= d;
            inv[[c, k]] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[[r, c]];
                for k in 0..n {
                    m[[r, k]] -= f * m[[c, k]];
                    inv[[r, k]] -= f * inv[[c, k]];
                }
            }
        }
    }
    inv
}

fn max_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[test]
fn plugin_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let n = 50;
    let eta = gaussian(&mut rng, n, 4);
    let rho = varying_rho(n);
    let selected: Vec<bool> = (0..n).map(|i| i % 3 != 1).collect();
    let idx: Vec<usize> = (0..n).filter(|&i| selected[i]).collect();
    let psi = gaussian(&mut rng, idx.len(), 3);

    let mut num = Array2::<f64>::zeros((3, 4));
    let mut den_v = Array2::<f64>::zeros((4, 4));
    let mut den_f = Array2::<f64>::zeros((4, 4));
    for (r, &i) in idx.iter().enumerate() {
        let w = (1.0 - rho[i]) / (rho[i] * rho[i]);
        for a in 0..4 {
            for b in 0..3 {
                num[[b, a]] += w * psi[[r, b]] * eta[[i, a]];
            }
            for b in 0..4 {
                den_v[[a, b]] += w * eta[[i, a]] * eta[[i, b]];
            }
        }
    }
    for i in 0..n {
        let w = (1.0 - rho[i]) / rho[i];
        for a in 0..4 {
            for b in 0..4 {
                den_f[[a, b]] += w * eta[[i, a]] * eta[[i, b]];
            }
        }
    }
    for (variant, den) in [
        (PluginVariant::ValidationDenominator, &den_v),
        (PluginVariant::FullDenominator, &den_f),
    ] {
        let g = gamma_plugin(psi.view(), eta.view(), rho.view(), &selected, variant).unwrap();
        let want = num.dot(&invert(den));
        assert!(max_diff(&g.matrix, &want) < 1e-10, "{variant:?}");
        assert_eq!(g.lambda, 0.0);
    }
}

#[test]
fn plugin_on_pure_noise_is_near_zero() {
    // entry noise measured across replicates, then a fresh draw is compared
    let n = 5000;
    let rho = Array1::from_elem(n, 0.3);
    let selected = vec![true; n];
    let draw = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eta = gaussian(&mut rng, n, 3);
        let psi = gaussian(&mut rng, n, 2);
        gamma_plugin(psi.view(), eta.view(), rho.view(), &selected, PluginVariant::ValidationDenominator)
            .unwrap()
            .matrix
    };
    let reps: Vec<Array2<f64>> = (0..200).map(|s| draw(1000 + s)).collect();
    let mean = reps.iter().fold(Array2::<f64>::zeros((2, 3)), |a, m| a + m) / 200.0;
    let sd = (reps.iter().fold(Array2::<f64>::zeros((2, 3)), |a, m| a + &(m - &mean).mapv(|v| v * v)) / 199.0)
        .mapv(f64::sqrt);
    let fresh = draw(7);
    for (g, s) in fresh.iter().zip(sd.iter()) {
        assert!(g.abs() < 3.0 * s, "{g} vs sd {s}");
    }
}

#[test]
fn plugin_identity_for_perfect_surrogate() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 60;
    let psi = gaussian(&mut rng, n, 3);
    let rho = Array1::from_elem(n, 0.4);
    let g = gamma_plugin(psi.view(), psi.view(), rho.view(), &vec![true; n], PluginVariant::ValidationDenominator)
        .unwrap();
    assert!(max_diff(&g.matrix, &Array2::eye(3)) < 1e-8);
}

#[test]
fn zero_penalty_reduces_to_validation_plugin() {
    let truth = array![[0.5, -0.3, 0.0, 0.8], [0.1, 0.0, 1.2, -0.4]];
    let (psi, eta) = planted(11, 200, &truth, 0.5);
    let rho = varying_rho(200);
    let plug = gamma_plugin(psi.view(), eta.view(), rho.view(), &[true; 200], PluginVariant::ValidationDenominator)
        .unwrap();
    for penalty in [Penalty::Lasso, Penalty::GroupLasso] {
        let reg = gamma_regularized(psi.view(), eta.view(), rho.view(), penalty, 0.0).unwrap();
        assert!(max_diff(&reg.matrix, &plug.matrix) < 1e-6, "{penalty:?}");
    }
}

#[test]
fn lambda_max_gives_exact_zero() {
    let truth = array![[0.5, -0.3, 0.0], [0.1, 0.0, 1.2]];
    let (psi, eta) = planted(12, 80, &truth, 0.3);
    let rho = varying_rho(80);
    for penalty in [Penalty::Lasso, Penalty::GroupLasso] {
        let prob = RegularizedProblem::new(psi.view(), eta.view(), rho.view(), true).unwrap();
        let lmax = prob.lambda_max(penalty);
        let g = gamma_regularized(psi.view(), eta.view(), rho.view(), penalty, lmax).unwrap();
        assert_eq!(g.active_entries, 0);
        assert!(g.matrix.iter().all(|&v| v == 0.0));
        // just below, something enters
        let g = gamma_regularized(psi.view(), eta.view(), rho.view(), penalty, 0.99 * lmax).unwrap();
        assert!(g.active_entries > 0);
    }
}

/// KKT conditions along full grids for several fixtures, including
/// strongly correlated columns.
#[test]
fn kkt_conditions_hold_along_paths() {
    let mut fixtures = Vec::new();
    let truth = array![[0.5, -0.3, 0.0, 0.8, 0.0], [0.1, 0.0, 1.2, -0.4, 0.0], [0.0, 0.0, 0.0, 0.0, 0.0]];
    fixtures.push(planted(21, 150, &truth, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let base = gaussian(&mut rng, 120, 3);
    let mut eta = Array2::zeros((120, 9));
    for j in 0..9 {
        let col = &base.column(j % 3) + &(gaussian(&mut rng, 120, 1).column(0).to_owned() * 0.1);
        eta.column_mut(j).assign(&col);
    }
    let psi = eta.slice(ndarray::s![.., 0..4]).to_owned() + gaussian(&mut rng, 120, 4);
    fixtures.push((psi, eta));
    for (psi, eta) in &fixtures {
        let n = psi.nrows();
        let rho = varying_rho(n);
        let prob = RegularizedProblem::new(psi.view(), eta.view(), rho.view(), true).unwrap();
        for penalty in [Penalty::Lasso, Penalty::GroupLasso] {
            let grid = lambda_grid(prob.lambda_max(penalty), DEFAULT_GRID_LEN, GRID_RATIO);
            let path = prob.path(penalty, &grid, &SolverOptions::default()).unwrap();
            let mut last_active = usize::MAX;
            for (sol, &lambda) in path.iter().zip(&grid) {
                let v = prob.kkt_violation(penalty, lambda, sol);
                assert!(v <= 1e-6, "{penalty:?} λ={lambda}: violation {v}");
                // grid runs large to small, so support can only grow (corpus property)
                let active = sol.iter().filter(|&&x| x != 0.0).count();
                if last_active != usize::MAX {
                    assert!(active >= last_active || penalty == Penalty::Lasso);
                }
                last_active = active;
            }
        }
    }
}

/// The CV minimizer keeps both planted columns and leaves only negligible
/// mass on the others; somewhere on the grid the support is exactly right.
#[test]
fn group_lasso_recovers_planted_columns() {
    let mut truth = Array2::<f64>::zeros((3, 10));
    truth.column_mut(2).assign(&array![1.0, -0.8, 0.5]);
    truth.column_mut(7).assign(&array![-0.6, 0.9, 1.1]);
    for seed in [31, 32, 33] {
        let (psi, eta) = planted(seed, 400, &truth, 0.3);
        let rho = Array1::from_elem(400, 0.25);
        let (g, cv) = gamma_regularized_cv(psi.view(), eta.view(), rho.view(), Penalty::GroupLasso, 5, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(g.method, GammaMethod::GroupLasso);
        assert!(g.active_columns.contains(&2) && g.active_columns.contains(&7));
        let norm = |j: usize| g.matrix.column(j).dot(&g.matrix.column(j)).sqrt();
        let planted_mass = norm(2) + norm(7);
        let spurious: f64 = (0..10).filter(|j| *j != 2 && *j != 7).map(norm).sum();
        assert!(spurious < 0.05 * planted_mass, "seed {seed}: spurious {spurious}");

        let prob = RegularizedProblem::new(psi.view(), eta.view(), rho.view(), true).unwrap();
        let path = prob.path(Penalty::GroupLasso, &cv.lambdas, &SolverOptions::default()).unwrap();
        let exact = path.iter().any(|sol| {
            let cols: Vec<usize> = (0..10).filter(|&j| sol.column(j).iter().any(|&v| v != 0.0)).collect();
            cols == vec![2, 7]
        });
        assert!(exact, "seed {seed}: no grid point isolates the planted columns");
    }
}

#[test]
fn cv_on_noise_prefers_heavy_shrinkage() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let n = 200;
    let eta = gaussian(&mut rng, n, 12);
    let psi = gaussian(&mut rng, n, 3);
    let rho = Array1::from_elem(n, 0.3);
    for penalty in [Penalty::Lasso, Penalty::GroupLasso] {
        let (g, cv) = gamma_regularized_cv(psi.view(), eta.view(), rho.view(), penalty, 5, &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        assert!(cv.chosen_index < DEFAULT_GRID_LEN / 2, "{penalty:?}: index {}", cv.chosen_index);
        assert!(g.active_entries as f64 <= 0.05 * 36.0, "{penalty:?}: {} active", g.active_entries);
        assert!(cv.fold_active_at_top.iter().all(|&a| a == 0));
    }
}

#[test]
fn cv_on_noiseless_data_prefers_light_shrinkage() {
    let truth = array![[0.5, -0.3, 0.2, 0.8], [0.1, 0.7, 1.2, -0.4]];
    let (psi, eta) = planted(51, 150, &truth, 0.0);
    let rho = Array1::from_elem(150, 0.3);
    for penalty in [Penalty::Lasso, Penalty::GroupLasso] {
        let cv = lambda_path_cv(psi.view(), eta.view(), rho.view(), penalty, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(cv.chosen_index >= 3 * DEFAULT_GRID_LEN / 4, "{penalty:?}: index {}", cv.chosen_index);
    }
}

fn fit_of(coef: Array1<f64>) -> FitResult {
    let p = coef.len();
    FitResult {
        family: Family::Logistic,
        coefficients: coef,
        bread: Array2::eye(p),
        converged: true,
        iterations: 1,
        final_score_norm: 0.0,
        firth_used: false,
    }
}

#[test]
fn assemble_reductions() {
    let beta_v = fit_of(array![0.3, -1.2]);
    let tv = vec![fit_of(array![1.0, 2.0]), fit_of(array![-0.5, 0.25])];
    let tf = vec![fit_of(array![0.9, 2.2]), fit_of(array![-0.4, 0.0])];
    let zero = GammaEstimate::zero(2, 4);
    let out = assemble_spi(&beta_v, &tv, &tf, &zero).unwrap();
    assert_eq!(out.as_slice().unwrap(), beta_v.coefficients.as_slice().unwrap());

    let any = GammaEstimate::new(array![[1.0, 2.0, 3.0, 4.0], [-1.0, 0.5, 0.0, 2.0]], GammaMethod::PluginFull, 0.0);
    let same = assemble_spi(&beta_v, &tv, &tv, &any).unwrap();
    assert!((&same - &beta_v.coefficients).iter().all(|v| v.abs() < 1e-15));

    let wrong = GammaEstimate::zero(2, 3);
    assert!(assemble_spi(&beta_v, &tv, &tf, &wrong).is_err());
}

#[test]
fn perfect_surrogate_returns_full_data_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let n = 300;
    let mut x = Array2::ones((n, 2));
    x.column_mut(1).assign(&gaussian(&mut rng, n, 1).column(0));
    let y: Array1<f64> = x.column(1).mapv(|v| 1.0 + 2.0 * v) + gaussian(&mut rng, n, 1).column(0);
    let idx: Vec<usize> = (0..n).filter(|i| i % 4 == 0).collect();
    let xv = x.select(Axis(0), &idx);
    let yv = y.select(Axis(0), &idx);
    let wv = Array1::from_elem(idx.len(), 4.0);
    let beta_v = fit_weighted_glm(xv.view(), yv.view(), wv.view(), Family::Linear, false).unwrap();
    // s ≡ y: the surrogate model is the outcome model
    let theta_v = beta_v.clone();
    let theta_f = fit_weighted_glm(x.view(), y.view(), Array1::ones(n).view(), Family::Linear, false).unwrap();
    let eye = GammaEstimate::new(Array2::eye(2), GammaMethod::PluginValidation, 0.0);
    let out = assemble_spi(&beta_v, &[theta_v], std::slice::from_ref(&theta_f), &eye).unwrap();
    assert!((&out - &theta_f.coefficients).iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn variance_without_augmentation() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let n = 40;
    let r = 0.25;
    let psi_all = gaussian(&mut rng, n, 2);
    let eta_all = gaussian(&mut rng, n, 3);
    let selected: Vec<bool> = (0..n).map(|i| i % 4 == 0).collect();
    let rho = Array1::from_elem(n, r);
    let v = asymptotic_variance(psi_all.view(), eta_all.view(), &GammaEstimate::zero(2, 3), rho.view(), &selected)
        .unwrap();
    let mut want = Array2::<f64>::zeros((2, 2));
    for i in (0..n).filter(|&i| selected[i]) {
        for a in 0..2 {
            for b in 0..2 {
                want[[a, b]] += psi_all[[i, a]] * psi_all[[i, b]] / (r * r);
            }
        }
    }
    want /= (n * n) as f64;
    assert!(max_diff(&v, &want) < 1e-15);
}

#[test]
fn perfect_surrogate_variance_matches_full_data() {
    // ψ ≡ η and Γ = I collapse the variance to the full-data one
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    let n = 20_000;
    let psi = gaussian(&mut rng, n, 2);
    let r = 0.2;
    let selected: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() < r).collect();
    let rho = Array1::from_elem(n, r);
    let eye = GammaEstimate::new(Array2::eye(2), GammaMethod::PluginValidation, 0.0);
    let v = asymptotic_variance(psi.view(), psi.view(), &eye, rho.view(), &selected).unwrap();
    let full: f64 = psi.iter().map(|x| x * x).sum::<f64>() / (n * n) as f64;
    assert!((v.diag().sum() - full).abs() < 1e-12 * full.max(1.0));
}

fn estimate_with_z(z: &[f64]) -> SpiEstimate {
    let p = z.len();
    SpiEstimate::new(Array1::from(z.to_vec()), Array2::eye(p), 0.1, "fixture").unwrap()
}

#[test]
fn wald_p_values_match_normal_cdf() {
    use statrs::distribution::{ContinuousCDF, Normal};
    let zs = [0.0, 0.3, -1.1, normal_quantile(0.975), 2.5, -3.7, 6.0];
    let est = estimate_with_z(&zs);
    let rows = wald_tests(&est, 0.05);
    let normal = Normal::new(0.0, 1.0).unwrap();
    for (row, &z) in rows.iter().zip(&zs) {
        let want = 2.0 * normal.sf(z.abs());
        assert!((row.p_value - want).abs() < 1e-10, "z={z}");
    }
    assert_eq!(rows[0].p_value, 1.0);
    assert!(!rows[0].reject);
    assert!(!rows[3].reject);
    let edge = wald_tests(&estimate_with_z(&[1.96 + 1e-6]), 0.05);
    assert!(edge[0].reject);
}

#[test]
fn estimate_invariants() {
    let cov = array![[4.0, 1.0], [1.0, 9.0]];
    let est = SpiEstimate::new(array![2.0, -3.0], cov, 0.5, "x").unwrap();
    assert_eq!(est.std_errors.to_vec(), vec![2.0, 3.0]);
    assert_eq!(est.z_stats.to_vec(), vec![1.0, -1.0]);
}
