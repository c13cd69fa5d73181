//! Dense linear algebra and shrinkage kernels.
//!
//! Matrices are plain `ndarray` arrays. Symmetric positive-definite systems
//! go through a Cholesky factorization; callers that can tolerate a small
//! diagonal perturbation use [`solve_spd_jittered`], which retries with
//! [`ridge_jitter`] on an escalating scale.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Result, SpiError};

/// First jitter scale tried after a failed factorization.
pub const JITTER_START: f64 = 1e-8;
/// Largest jitter scale before giving up.
pub const JITTER_MAX: f64 = 1e-2;

/// Lower-triangular Cholesky factor `L` with `a = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Array2<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Cholesky {
    /// Factorizes using only the lower triangle of `a`.
    pub fn new(a: ArrayView2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(SpiError::DimensionMismatch(format!(
                "cholesky of a {}x{} matrix",
                n,
                a.ncols()
            )));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        let ls = l.as_slice_mut().expect("fresh array is contiguous");
        for j in 0..n {
            let (head, tail) = ls.split_at_mut((j + 1) * n);
            let row_j = &mut head[j * n..];
            let d = a[[j, j]] - dot(&row_j[..j], &row_j[..j]);
            if !(d > 0.0) || !d.is_finite() {
                return Err(SpiError::NotPositiveDefinite { pivot: j });
            }
            let d = d.sqrt();
            row_j[j] = d;
            let row_j = &head[j * n..j * n + j];
            for i in (j + 1)..n {
                let row_i = &mut tail[(i - j - 1) * n..(i - j) * n];
                row_i[j] = (a[[i, j]] - dot(&row_i[..j], row_j)) / d;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.lower
    }

    pub fn solve_vec(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n, "rhs length must match factor dimension");
        let l = self.lower.as_slice().expect("factor is contiguous");
        let mut y = b.to_owned();
        let ys = y.as_slice_mut().expect("fresh array is contiguous");
        for i in 0..n {
            let row = &l[i * n..i * n + i];
            ys[i] = (ys[i] - dot(row, &ys[..i])) / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = ys[i];
            for k in (i + 1)..n {
                s -= l[k * n + i] * ys[k];
            }
            ys[i] = s / l[i * n + i];
        }
        y
    }

    pub fn solve_mat(&self, b: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros(b.raw_dim());
        for (j, col) in b.axis_iter(Axis(1)).enumerate() {
            out.column_mut(j).assign(&self.solve_vec(col));
        }
        out
    }

    pub fn inverse(&self) -> Array2<f64> {
        self.solve_mat(Array2::eye(self.dim()).view())
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diag().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Solves `a x = b` for symmetric positive-definite `a`.
pub fn solve_spd(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    if b.len() != a.nrows() {
        return Err(SpiError::DimensionMismatch(format!(
            "system of order {} with rhs of length {}",
            a.nrows(),
            b.len()
        )));
    }
    Ok(Cholesky::new(a)?.solve_vec(b))
}

/// Matrix right-hand-side version of [`solve_spd`].
pub fn solve_spd_mat(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    if b.nrows() != a.nrows() {
        return Err(SpiError::DimensionMismatch(format!(
            "system of order {} with rhs of {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    Ok(Cholesky::new(a)?.solve_mat(b))
}

/// Returns `a + eps * I` with `eps = scale * mean(diag(a))`, or `eps = scale`
/// when the mean diagonal is zero.
pub fn ridge_jitter(a: ArrayView2<f64>, scale: f64) -> Array2<f64> {
    let n = a.nrows();
    let mean_diag = if n == 0 {
        0.0
    } else {
        a.diag().sum() / n as f64
    };
    let eps = if mean_diag == 0.0 {
        scale
    } else {
        scale * mean_diag.abs()
    };
    let mut out = a.to_owned();
    for i in 0..n {
        out[[i, i]] += eps;
    }
    out
}

/// Factorizes `a`, escalating the diagonal jitter from [`JITTER_START`] by
/// factors of ten up to [`JITTER_MAX`]. Returns the factor and the scale used
/// (zero when no jitter was needed).
pub fn cholesky_jittered(a: ArrayView2<f64>) -> Result<(Cholesky, f64)> {
    match Cholesky::new(a) {
        Ok(c) => return Ok((c, 0.0)),
        Err(SpiError::NotPositiveDefinite { .. }) => {}
        Err(e) => return Err(e),
    }
    let mut scale = JITTER_START;
    while scale <= JITTER_MAX * (1.0 + 1e-12) {
        if let Ok(c) = Cholesky::new(ridge_jitter(a, scale).view()) {
            return Ok((c, scale));
        }
        scale *= 10.0;
    }
    Err(SpiError::SingularInformation)
}

/// [`solve_spd`] with the jitter escalation policy applied on failure.
pub fn solve_spd_jittered(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    if b.len() != a.nrows() {
        return Err(SpiError::DimensionMismatch(format!(
            "system of order {} with rhs of length {}",
            a.nrows(),
            b.len()
        )));
    }
    Ok(cholesky_jittered(a)?.0.solve_vec(b))
}

#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Group shrinkage `max(1 - t/‖v‖, 0) v`.
pub fn block_soft_threshold(v: ArrayView1<f64>, t: f64) -> Array1<f64> {
    debug_assert!(t >= 0.0);
    let norm = v.dot(&v).sqrt();
    if norm == 0.0 || norm <= t {
        return Array1::zeros(v.len());
    }
    let factor = 1.0 - t / norm;
    v.mapv(|x| x * factor)
}

pub fn all_finite<'a, I: IntoIterator<Item = &'a f64>>(values: I) -> bool {
    values.into_iter().all(|v| v.is_finite())
}

pub(crate) fn ensure_finite<'a, I: IntoIterator<Item = &'a f64>>(
    values: I,
    what: &str,
) -> Result<()> {
    if all_finite(values) {
        Ok(())
    } else {
        Err(SpiError::InvalidInput(format!("{what} contains non-finite values")))
    }
}

/// Symmetrizes in place as `(a + aᵀ)/2`.
pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = m;
            a[[j, i]] = m;
        }
    }
}

/// Accumulates `Σ w_i r_i r_iᵀ` over the rows of `rows`.
pub fn weighted_gram(rows: ArrayView2<f64>, weights: ArrayView1<f64>) -> Array2<f64> {
    let scaled = &rows * &weights.insert_axis(Axis(1));
    scaled.t().dot(&rows)
}

/// Accumulates `Σ w_i a_i b_iᵀ` over paired rows.
pub fn weighted_cross(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    weights: ArrayView1<f64>,
) -> Array2<f64> {
    let scaled = &a * &weights.insert_axis(Axis(1));
    scaled.t().dot(&b)
}

pub fn max_abs(values: ArrayView1<f64>) -> f64 {
    values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}
