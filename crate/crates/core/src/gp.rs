//! Single-output Gaussian-process regression with a zero-mean prior and the
//! anisotropic squared-exponential kernel.
//!
//! Inputs are standardized per dimension and outputs centered before any
//! kernel math; the fitted transforms travel with the model. Hyperparameters
//! are optimized in log-space, either by [`adam_optimize`] on the negative
//! log marginal likelihood (optionally mini-batched) or by a
//! Metropolis-Hastings search.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnTransform, Dataset, PosteriorPrediction};
use crate::error::Error;
use crate::kernels::{ard_covariance_matrix, ard_log_gradients, ArdKernelParams};
use crate::numerics::{cholesky_with_jitter, CholeskyFactor, RngStream};
use crate::surrogate::{read_model, require_array, write_model, Surrogate};
use crate::trainers::{adam_optimize, mh_optimize, minibatch_indices, AdamConfig, MhTrainerConfig};

const LN_TAU: f64 = 1.8378770664093453; // ln(2 pi)

/// ln p(y | X, params) = -1/2 y^T K^{-1} y - 1/2 ln det K - N/2 ln 2pi,
/// with K = k(X, X) + noise I.
pub fn log_marginal_likelihood(
    params: &ArdKernelParams,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<f64, Error> {
    let (lml, _chol, _alpha) = lml_parts(params, x, y)?;
    Ok(lml)
}

/// Log marginal likelihood and its gradient with respect to the
/// log-hyperparameters [ln l_1 .. ln l_D, ln sigma^2, ln tau^2].
///
/// The gradient is 1/2 tr[(alpha alpha^T - K^{-1}) dK/dtheta] per parameter.
pub fn log_marginal_likelihood_with_gradient(
    params: &ArdKernelParams,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(f64, Vec<f64>), Error> {
    let (lml, chol, alpha) = lml_parts(params, x, y)?;
    let k_inv = chol.inverse();
    let grads = ard_log_gradients(params, x)?;
    let n = x.nrows();
    let mut out = Vec::with_capacity(grads.len());
    for g in &grads {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (alpha[i] * alpha[j] - k_inv[(i, j)]) * g[(i, j)];
            }
        }
        out.push(0.5 * acc);
    }
    Ok((lml, out))
}

fn lml_parts(
    params: &ArdKernelParams,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(f64, CholeskyFactor, DVector<f64>), Error> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} input rows vs {} outputs",
            x.nrows(),
            y.len()
        )));
    }
    let k = ard_covariance_matrix(params, x, None)?;
    let chol = cholesky_with_jitter(&k, 0.0)?;
    let alpha = chol.solve(y);
    let n = x.nrows() as f64;
    let lml = -0.5 * y.dot(&alpha) - 0.5 * chol.log_det() - 0.5 * n * LN_TAU;
    Ok((lml, chol, alpha))
}

#[derive(Serialize, Deserialize)]
struct GpMeta {
    params: ArdKernelParams,
    input_transform: ColumnTransform,
    output_transform: ColumnTransform,
}

/// A fitted Gaussian process: hyperparameters, transforms, and the factored
/// training covariance.
#[derive(Clone, Debug)]
pub struct GpModel {
    params: ArdKernelParams,
    input_transform: ColumnTransform,
    output_transform: ColumnTransform,
    data: Dataset,
    x_std: DMatrix<f64>,
    y_cent: DVector<f64>,
    chol: CholeskyFactor,
    alpha: DVector<f64>,
}

impl GpModel {
    /// Factors the training covariance for fixed hyperparameters, fitting
    /// standardizing/centering transforms from the data.
    pub fn fit(data: &Dataset, params: ArdKernelParams) -> Result<Self, Error> {
        let input_transform = ColumnTransform::standardizing(data.inputs());
        let output_transform = ColumnTransform::centering(data.outputs());
        Self::fit_with_transforms(data, params, input_transform, output_transform)
    }

    /// As [`GpModel::fit`] with caller-supplied transforms (used by loading
    /// and by callers that train in a shared transformed space).
    pub fn fit_with_transforms(
        data: &Dataset,
        params: ArdKernelParams,
        input_transform: ColumnTransform,
        output_transform: ColumnTransform,
    ) -> Result<Self, Error> {
        if data.output_dim() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "single-output model got {} output columns",
                data.output_dim()
            )));
        }
        if input_transform.cols() != data.input_dim() || output_transform.cols() != 1 {
            return Err(Error::DimensionMismatch("transform widths".into()));
        }
        params.validate()?;
        if params.dim() != data.input_dim() {
            return Err(Error::DimensionMismatch("kernel dimension vs data".into()));
        }
        let x_std = input_transform.apply(data.inputs());
        let y_cent = output_transform.apply(data.outputs()).column(0).into_owned();
        let k = ard_covariance_matrix(&params, &x_std, None)?;
        let chol = cholesky_with_jitter(&k, 0.0)?;
        let alpha = chol.solve(&y_cent);
        Ok(Self {
            params,
            input_transform,
            output_transform,
            data: data.clone(),
            x_std,
            y_cent,
            chol,
            alpha,
        })
    }

    pub fn params(&self) -> &ArdKernelParams {
        &self.params
    }

    pub fn training_data(&self) -> &Dataset {
        &self.data
    }

    pub fn input_transform(&self) -> &ColumnTransform {
        &self.input_transform
    }

    /// Log marginal likelihood of the training data in transformed space
    /// (the quantity the trainers optimize).
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.y_cent.len() as f64;
        -0.5 * self.y_cent.dot(&self.alpha) - 0.5 * self.chol.log_det() - 0.5 * n * LN_TAU
    }

    /// Posterior prediction at new points (original units).
    ///
    /// The predictive covariance describes observations, so the diagonal
    /// includes the noise variance. Negative marginal variances from
    /// finite-precision cancellation are clamped at zero and counted.
    pub fn predict(
        &self,
        inputs: &DMatrix<f64>,
        full_covariance: bool,
    ) -> Result<PosteriorPrediction, Error> {
        if inputs.ncols() != self.data.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "query has {} columns, model expects {}",
                inputs.ncols(),
                self.data.input_dim()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("query entries must be finite".into()));
        }
        let xq = self.input_transform.apply(inputs);
        let k_star = ard_covariance_matrix(&self.params, &xq, Some(&self.x_std))?;
        let mean_cent = &k_star * &self.alpha;
        let mean = DVector::from_fn(mean_cent.len(), |i, _| {
            self.output_transform.invert_value(0, mean_cent[i])
        });

        // v = K^{-1} k_star^T, shared by both covariance modes.
        let v = self.chol.solve_matrix(&k_star.transpose());
        let mut clamped = 0usize;
        let prior_var = self.params.amplitude + self.params.noise;
        let mut variance = DVector::zeros(inputs.nrows());
        for i in 0..inputs.nrows() {
            let reduction = k_star.row(i).transpose().dot(&v.column(i).into_owned());
            let mut var = prior_var - reduction;
            if var < 0.0 {
                var = 0.0;
                clamped += 1;
            }
            variance[i] = self.output_transform.invert_variance(0, var);
        }

        let covariance = if full_covariance {
            let k_ss = ard_covariance_matrix(&self.params, &xq, None)?;
            let mut cov = k_ss - &k_star * &v;
            let s = self.output_transform.scales()[0];
            cov.scale_mut(s * s);
            Some(cov)
        } else {
            None
        };

        Ok(PosteriorPrediction { mean, variance, covariance, clamped_negative_variances: clamped })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), Error> {
        let meta = GpMeta {
            params: self.params.clone(),
            input_transform: self.input_transform.clone(),
            output_transform: self.output_transform.clone(),
        };
        write_model(
            path,
            "gp",
            serde_json::to_value(&meta)?,
            &[("train_inputs", self.data.inputs()), ("train_outputs", self.data.outputs())],
        )
    }

    pub fn load(path: &std::path::Path) -> Result<Self, Error> {
        let file = read_model(path)?;
        if file.kind != "gp" {
            return Err(Error::CorruptFile(format!("expected a gp model, found '{}'", file.kind)));
        }
        let meta: GpMeta = serde_json::from_value(file.meta.clone())?;
        let inputs = require_array(&file, "train_inputs")?;
        let outputs = require_array(&file, "train_outputs")?;
        let data = Dataset::new(inputs, outputs)?;
        Self::fit_with_transforms(&data, meta.params, meta.input_transform, meta.output_transform)
    }
}

impl Surrogate for GpModel {
    fn input_dim(&self) -> usize {
        self.data.input_dim()
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn predict(
        &self,
        inputs: &DMatrix<f64>,
        full_covariance: bool,
    ) -> Result<PosteriorPrediction, Error> {
        GpModel::predict(self, inputs, full_covariance)
    }

    fn length_scales(&self) -> Vec<f64> {
        self.params
            .length_scales
            .iter()
            .zip(self.input_transform.scales())
            .map(|(l, s)| l * s)
            .collect()
    }
}

/// Hyperparameter search strategy for [`train_gp`].
#[derive(Clone, Debug)]
pub enum GpTrainer {
    /// Gradient ascent on the log marginal likelihood; `batch_size` sub-samples
    /// training rows per iteration (None = full batch).
    Adam { config: AdamConfig, batch_size: Option<usize> },
    /// Random-walk search in log-hyperparameter space; priors and proposal
    /// scales must have length D + 2 ([ln l_1 .. ln l_D, ln sigma^2, ln tau^2]).
    MetropolisHastings(MhTrainerConfig),
}

/// Diagnostics from a training run.
#[derive(Clone, Debug)]
pub struct GpFitReport {
    /// Negative log marginal likelihood per evaluation (Adam route) or per
    /// accepted state (MH route).
    pub objective_trace: Vec<f64>,
    pub final_log_marginal: f64,
    pub acceptance_rate: Option<f64>,
}

/// Optimizes kernel hyperparameters on `data` and returns the fitted model.
///
/// Initialization: unit length scales in standardized input space, amplitude
/// at the centered-output variance, noise at 1% of that. Deterministic given
/// `(data, trainer, rng state)`.
pub fn train_gp(
    data: &Dataset,
    trainer: &GpTrainer,
    rng: &mut RngStream,
) -> Result<(GpModel, GpFitReport), Error> {
    let input_transform = ColumnTransform::standardizing(data.inputs());
    let output_transform = ColumnTransform::centering(data.outputs());
    let x_std = input_transform.apply(data.inputs());
    let y_cent = output_transform.apply(data.outputs()).column(0).into_owned();
    let d = data.input_dim();

    let n = data.len() as f64;
    let y_var = (y_cent.dot(&y_cent) / n).max(1e-12);
    let init: Vec<f64> = (0..d)
        .map(|_| 0.0)
        .chain([y_var.ln(), (0.01 * y_var).ln()])
        .collect();

    let unpack = |theta: &[f64]| -> Result<ArdKernelParams, Error> {
        ArdKernelParams::new(
            theta[..d].iter().map(|t| t.exp()).collect(),
            theta[d].exp(),
            theta[d + 1].exp(),
        )
    };

    let best_theta = match trainer {
        GpTrainer::Adam { config, batch_size } => {
            let batch = batch_size.unwrap_or(data.len()).min(data.len());
            if batch == 0 {
                return Err(Error::InvalidConfig("batch size must be positive".into()));
            }
            let mut batch_rng = rng.substream(rng.stream_id() ^ 0x5eed_u64.rotate_left(17));
            let full = batch >= data.len();
            let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>), Error> {
                let params = unpack(theta)?;
                let (lml, grad) = if full {
                    log_marginal_likelihood_with_gradient(&params, &x_std, &y_cent)?
                } else {
                    let idx = minibatch_indices(x_std.nrows(), batch, &mut batch_rng);
                    let xb = DMatrix::from_fn(idx.len(), d, |i, j| x_std[(idx[i], j)]);
                    let yb = DVector::from_fn(idx.len(), |i, _| y_cent[idx[i]]);
                    log_marginal_likelihood_with_gradient(&params, &xb, &yb)?
                };
                Ok((-lml, grad.iter().map(|g| -g).collect()))
            };
            let res = adam_optimize(objective, &init, config)?;
            let report_trace = res.trace.clone();
            let theta = res.parameters;
            (theta, report_trace, None)
        }
        GpTrainer::MetropolisHastings(cfg) => {
            if cfg.priors.len() != d + 2 {
                return Err(Error::DimensionMismatch(format!(
                    "MH trainer needs {} priors (D + 2), got {}",
                    d + 2,
                    cfg.priors.len()
                )));
            }
            let mut cfg = cfg.clone();
            if cfg.init.is_none() {
                cfg.init = Some(init.clone());
            }
            let target = |theta: &[f64]| -> Result<f64, Error> {
                let params = unpack(theta)?;
                log_marginal_likelihood(&params, &x_std, &y_cent)
            };
            let res = mh_optimize(target, &cfg, rng)?;
            let trace = res.log_targets.iter().map(|t| -t).collect();
            (res.best_parameters, trace, Some(res.acceptance_rate))
        }
    };
    let (theta, objective_trace, acceptance_rate) = best_theta;
    let params = unpack(&theta)?;
    let model = GpModel::fit_with_transforms(data, params, input_transform, output_transform)?;
    let final_log_marginal = model.log_marginal_likelihood();
    Ok((model, GpFitReport { objective_trace, final_log_marginal, acceptance_rate }))
}
