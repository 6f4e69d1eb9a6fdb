use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::Error;

/// Relative tolerance for the symmetry pre-check.
const SYMMETRY_RTOL: f64 = 1e-10;

/// Number of escalating-jitter retries after the initial attempt.
const MAX_RETRIES: usize = 6;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// together with the diagonal jitter that was needed to factor it.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    inner: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl CholeskyFactor {
    /// Lower-triangular factor L with M + jitter*I = L L^T.
    pub fn lower(&self) -> DMatrix<f64> {
        self.inner.l()
    }

    /// Jitter that was added to the diagonal (0 when none was needed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.inner.l_dirty().nrows()
    }

    /// ln det(M + jitter*I) = 2 sum_i ln L_ii.
    pub fn log_det(&self) -> f64 {
        let l = self.inner.l_dirty();
        (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
    }

    /// Solves (M + jitter*I) x = b.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.inner.solve(b)
    }

    /// Solves (M + jitter*I) X = B column-wise.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.inner.solve(b)
    }

    /// Explicit inverse (M + jitter*I)^{-1}. Prefer the solve methods; this
    /// exists for gradient traces that need the full inverse.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.inner.inverse()
    }
}

/// Factors a symmetric positive-definite matrix, escalating diagonal jitter
/// on failure.
///
/// The first attempt adds `base_jitter` (0 is allowed). If factorization
/// fails, the jitter ladder starts at 1e-10 times the mean absolute diagonal
/// and escalates tenfold, up to [`MAX_RETRIES`] retries. Errors:
/// [`Error::NonSquare`], [`Error::NonSymmetric`] (relative tolerance 1e-10),
/// [`Error::NotPositiveDefinite`] when the ladder is exhausted.
pub fn cholesky_with_jitter(m: &DMatrix<f64>, base_jitter: f64) -> Result<CholeskyFactor, Error> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare { rows: m.nrows(), cols: m.ncols() });
    }
    if m.is_empty() {
        return Err(Error::EmptyData("cannot factor an empty matrix".into()));
    }
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                return Err(Error::NonSymmetric { tol: SYMMETRY_RTOL });
            }
        }
    }

    let n = m.nrows();
    let mean_diag = (0..n).map(|i| m[(i, i)].abs()).sum::<f64>() / n as f64;
    let ladder_base = if mean_diag > 0.0 { 1e-10 * mean_diag } else { 1e-10 };

    let mut jitter = base_jitter;
    for attempt in 0..=MAX_RETRIES {
        let candidate = if jitter == 0.0 {
            m.clone()
        } else {
            let mut c = m.clone();
            for i in 0..n {
                c[(i, i)] += jitter;
            }
            c
        };
        if let Some(inner) = Cholesky::new(candidate) {
            return Ok(CholeskyFactor { inner, jitter });
        }
        jitter = ladder_base * 10f64.powi(attempt as i32);
    }
    Err(Error::NotPositiveDefinite {
        attempts: MAX_RETRIES + 1,
        last_jitter: ladder_base * 10f64.powi(MAX_RETRIES as i32 - 1),
    })
}
