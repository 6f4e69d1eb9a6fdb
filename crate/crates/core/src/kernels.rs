//! Covariance kernels: anisotropic squared-exponential with additive noise,
//! and its linear-model-of-coregionalization extension for multi-output
//! models.
//!
//! Noise is attached to the *training index*, not to coordinates: assembling
//! a covariance against the same matrix (`x_prime = None`) adds `noise` to the
//! diagonal, cross-covariances never do. Pairwise [`ard_covariance`] is the
//! noiseless kernel.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Anisotropic squared-exponential kernel parameters.
///
/// `length_scales` are per input dimension; `amplitude` is the signal
/// variance (sigma^2), `noise` the observation-noise variance (tau^2).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArdKernelParams {
    pub length_scales: Vec<f64>,
    pub amplitude: f64,
    pub noise: f64,
}

impl ArdKernelParams {
    pub fn new(length_scales: Vec<f64>, amplitude: f64, noise: f64) -> Result<Self, Error> {
        let p = Self { length_scales, amplitude, noise };
        p.validate()?;
        Ok(p)
    }

    /// Unit-amplitude isotropic defaults for a given input dimension.
    pub fn isotropic(dim: usize, length_scale: f64, amplitude: f64, noise: f64) -> Result<Self, Error> {
        Self::new(vec![length_scale; dim], amplitude, noise)
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.length_scales.is_empty() {
            return Err(Error::EmptyData("length scales".into()));
        }
        if self.length_scales.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(Error::NonPositiveParameter("length scale".into()));
        }
        if !self.amplitude.is_finite() || self.amplitude <= 0.0 {
            return Err(Error::NonPositiveParameter("amplitude".into()));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(Error::NonPositiveParameter("noise (must be >= 0)".into()));
        }
        Ok(())
    }
}

/// Noiseless pairwise kernel sigma^2 exp(-1/2 sum_d (x_d - x'_d)^2 / l_d^2).
pub fn ard_covariance(params: &ArdKernelParams, x: &[f64], x_prime: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), params.length_scales.len());
    debug_assert_eq!(x_prime.len(), params.length_scales.len());
    let mut q = 0.0;
    for d in 0..x.len() {
        let delta = (x[d] - x_prime[d]) / params.length_scales[d];
        q += delta * delta;
    }
    params.amplitude * (-0.5 * q).exp()
}

/// Assembles a covariance matrix.
///
/// With `x_prime = None` this is the symmetric training covariance
/// k(X, X) + noise * I; with `Some(x2)` it is the rectangular
/// cross-covariance k(X, X2) without noise.
pub fn ard_covariance_matrix(
    params: &ArdKernelParams,
    x: &DMatrix<f64>,
    x_prime: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>, Error> {
    params.validate()?;
    let d = params.dim();
    if x.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "inputs have {} columns, kernel has {} length scales",
            x.ncols(),
            d
        )));
    }
    match x_prime {
        None => {
            let n = x.nrows();
            let mut k = DMatrix::zeros(n, n);
            for i in 0..n {
                k[(i, i)] = params.amplitude + params.noise;
                let xi: Vec<f64> = x.row(i).iter().copied().collect();
                for j in (i + 1)..n {
                    let xj: Vec<f64> = x.row(j).iter().copied().collect();
                    let v = ard_covariance(params, &xi, &xj);
                    k[(i, j)] = v;
                    k[(j, i)] = v;
                }
            }
            Ok(k)
        }
        Some(x2) => {
            if x2.ncols() != d {
                return Err(Error::DimensionMismatch(format!(
                    "second inputs have {} columns, kernel has {} length scales",
                    x2.ncols(),
                    d
                )));
            }
            let mut k = DMatrix::zeros(x.nrows(), x2.nrows());
            for i in 0..x.nrows() {
                let xi: Vec<f64> = x.row(i).iter().copied().collect();
                for j in 0..x2.nrows() {
                    let xj: Vec<f64> = x2.row(j).iter().copied().collect();
                    k[(i, j)] = ard_covariance(params, &xi, &xj);
                }
            }
            Ok(k)
        }
    }
}

/// Derivatives of the training covariance k(X, X) + noise * I with respect to
/// the log-parameters, ordered [ln l_1 .. ln l_D, ln sigma^2, ln tau^2].
pub fn ard_log_gradients(
    params: &ArdKernelParams,
    x: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>, Error> {
    params.validate()?;
    let d = params.dim();
    if x.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "inputs have {} columns, kernel has {} length scales",
            x.ncols(),
            d
        )));
    }
    let n = x.nrows();
    let noiseless = {
        let mut k = ard_covariance_matrix(params, x, None)?;
        for i in 0..n {
            k[(i, i)] -= params.noise;
        }
        k
    };

    let mut grads = Vec::with_capacity(d + 2);
    for dd in 0..d {
        let l2 = params.length_scales[dd] * params.length_scales[dd];
        let mut g = noiseless.clone();
        for i in 0..n {
            for j in 0..n {
                let delta = x[(i, dd)] - x[(j, dd)];
                g[(i, j)] *= delta * delta / l2;
            }
        }
        grads.push(g);
    }
    grads.push(noiseless);
    let mut noise_grad = DMatrix::zeros(n, n);
    for i in 0..n {
        noise_grad[(i, i)] = params.noise;
    }
    grads.push(noise_grad);
    Ok(grads)
}

/// One coregionalization basis: output mixing A (M x R) with per-output
/// nugget lambda (>= 0), paired with the input kernel driving this basis.
/// The basis kernel's own `noise` field is ignored; observation noise is a
/// single shared term on the full joint diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmcBasis {
    pub a: DMatrix<f64>,
    pub lambda: Vec<f64>,
    pub kernel: ArdKernelParams,
}

impl LmcBasis {
    pub fn validate(&self, outputs: usize, input_dim: usize) -> Result<(), Error> {
        if self.a.nrows() != outputs {
            return Err(Error::DimensionMismatch(format!(
                "mixing matrix has {} rows for {} outputs",
                self.a.nrows(),
                outputs
            )));
        }
        if self.a.ncols() == 0 {
            return Err(Error::EmptyData("mixing matrix needs at least one column".into()));
        }
        if self.lambda.len() != outputs {
            return Err(Error::DimensionMismatch(format!(
                "lambda has {} entries for {} outputs",
                self.lambda.len(),
                outputs
            )));
        }
        if self.lambda.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::NonPositiveParameter("lambda (must be >= 0)".into()));
        }
        if self.kernel.dim() != input_dim {
            return Err(Error::DimensionMismatch("basis kernel dimension".into()));
        }
        self.kernel.validate()
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    /// B = A A^T + diag(lambda), positive semi-definite by construction.
    pub fn coregionalization_matrix(&self) -> DMatrix<f64> {
        let mut b = &self.a * self.a.transpose();
        for (m, l) in self.lambda.iter().enumerate() {
            b[(m, m)] += l;
        }
        b
    }
}

/// Joint covariance sum_q B_q (x) K_q over vectorized outputs (output-major),
/// plus shared noise on the diagonal when `x_prime = None`.
///
/// Block (m, m') of the result is an N x N' matrix sum_q B_q[m, m'] K_q.
pub fn lmc_full_covariance(
    bases: &[LmcBasis],
    noise: f64,
    outputs: usize,
    x: &DMatrix<f64>,
    x_prime: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>, Error> {
    if bases.is_empty() {
        return Err(Error::EmptyData("coregionalization bases".into()));
    }
    if !noise.is_finite() || noise < 0.0 {
        return Err(Error::NonPositiveParameter("shared noise (must be >= 0)".into()));
    }
    for b in bases {
        b.validate(outputs, x.ncols())?;
    }
    let n = x.nrows();
    let n2 = x_prime.map_or(n, |m| m.nrows());
    let mut full = DMatrix::zeros(n * outputs, n2 * outputs);
    for basis in bases {
        // The basis kernel contributes no per-basis noise even on the
        // same-matrix path; shared noise is added once at the end.
        let noiseless = ArdKernelParams { noise: 0.0, ..basis.kernel.clone() };
        let kq = match x_prime {
            None => ard_covariance_matrix(&noiseless, x, None)?,
            Some(x2) => ard_covariance_matrix(&noiseless, x, Some(x2))?,
        };
        let b = basis.coregionalization_matrix();
        for m in 0..outputs {
            for m2 in 0..outputs {
                let w = b[(m, m2)];
                if w == 0.0 {
                    continue;
                }
                let mut block = full.view_mut((m * n, m2 * n2), (n, n2));
                for j in 0..n2 {
                    for i in 0..n {
                        block[(i, j)] += w * kq[(i, j)];
                    }
                }
            }
        }
    }
    if x_prime.is_none() && noise > 0.0 {
        for i in 0..n * outputs {
            full[(i, i)] += noise;
        }
    }
    Ok(full)
}
