//! Multi-output Gaussian-process regression via the linear model of
//! coregionalization.
//!
//! Outputs are vectorized output-major (all rows of output 0, then output 1,
//! ...), giving the joint covariance sum_q B_q (x) K_q + tau^2 I over the
//! stacked vector. Each basis owns an input kernel (length scales +
//! amplitude); the output mixing is B_q = A_q A_q^T + diag(lambda_q) with one
//! shared observation noise on the joint diagonal.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnTransform, Dataset, PosteriorPrediction};
use crate::error::Error;
use crate::kernels::{ard_covariance_matrix, lmc_full_covariance, ArdKernelParams, LmcBasis};
use crate::numerics::{cholesky_with_jitter, CholeskyFactor, RngStream};
use crate::surrogate::{read_model, require_array, write_model, Surrogate};
use crate::trainers::{adam_optimize, minibatch_indices, AdamConfig};

const LN_TAU: f64 = 1.8378770664093453; // ln(2 pi)

/// Stacks an N x M output matrix output-major: [[1,2],[3,4]] -> [1,3,2,4].
pub fn vectorize_outputs(outputs: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(outputs.as_slice())
}

/// Inverse of [`vectorize_outputs`]; errors when the length is not divisible
/// by the output count.
pub fn devectorize_outputs(v: &DVector<f64>, outputs: usize) -> Result<DMatrix<f64>, Error> {
    if outputs == 0 || v.len() % outputs != 0 {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} cannot split into {} outputs",
            v.len(),
            outputs
        )));
    }
    Ok(DMatrix::from_column_slice(v.len() / outputs, outputs, v.as_slice()))
}

/// The printed parameter accounting Q (D+1) (M+1) R, kept as reported
/// metadata alongside the parameterization-derived count.
pub fn nominal_parameter_count(bases: usize, rank: usize, outputs: usize, input_dim: usize) -> usize {
    bases * (input_dim + 1) * (outputs + 1) * rank
}

/// Free parameters in this parameterization: per basis D length scales, one
/// amplitude, M x R mixing entries, M nuggets; plus the shared noise.
pub fn actual_parameter_count(bases: usize, rank: usize, outputs: usize, input_dim: usize) -> usize {
    bases * (input_dim + 1 + outputs * (rank + 1)) + 1
}

/// Joint log likelihood of vectorized outputs under the coregionalized prior:
/// -1/2 y^T K^{-1} y - 1/2 ln det K - NM/2 ln 2pi.
pub fn joint_log_likelihood(
    bases: &[LmcBasis],
    noise: f64,
    outputs: usize,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<f64, Error> {
    let k = lmc_full_covariance(bases, noise, outputs, x, None)?;
    let chol = cholesky_with_jitter(&k, 0.0)?;
    let yv = vectorize_outputs(y);
    let alpha = chol.solve(&yv);
    let nm = yv.len() as f64;
    Ok(-0.5 * yv.dot(&alpha) - 0.5 * chol.log_det() - 0.5 * nm * LN_TAU)
}

#[derive(Serialize, Deserialize)]
struct MogpMeta {
    bases: Vec<LmcBasis>,
    noise: f64,
    outputs: usize,
    input_transform: ColumnTransform,
    output_transform: ColumnTransform,
}

/// A fitted coregionalized multi-output Gaussian process.
#[derive(Clone, Debug)]
pub struct MogpModel {
    bases: Vec<LmcBasis>,
    noise: f64,
    input_transform: ColumnTransform,
    output_transform: ColumnTransform,
    data: Dataset,
    x_std: DMatrix<f64>,
    chol: CholeskyFactor,
    alpha: DVector<f64>,
}

impl MogpModel {
    /// Factors the joint covariance for fixed hyperparameters, fitting
    /// standardizing/centering transforms from the data.
    pub fn fit(data: &Dataset, bases: Vec<LmcBasis>, noise: f64) -> Result<Self, Error> {
        let input_transform = ColumnTransform::standardizing(data.inputs());
        let output_transform = ColumnTransform::centering(data.outputs());
        Self::fit_with_transforms(data, bases, noise, input_transform, output_transform)
    }

    pub fn fit_with_transforms(
        data: &Dataset,
        bases: Vec<LmcBasis>,
        noise: f64,
        input_transform: ColumnTransform,
        output_transform: ColumnTransform,
    ) -> Result<Self, Error> {
        let m = data.output_dim();
        if bases.is_empty() {
            return Err(Error::EmptyData("coregionalization bases".into()));
        }
        for b in &bases {
            b.validate(m, data.input_dim())?;
        }
        if input_transform.cols() != data.input_dim() || output_transform.cols() != m {
            return Err(Error::DimensionMismatch("transform widths".into()));
        }
        let x_std = input_transform.apply(data.inputs());
        let y_cent = output_transform.apply(data.outputs());
        let k = lmc_full_covariance(&bases, noise, m, &x_std, None)?;
        let chol = cholesky_with_jitter(&k, 0.0)?;
        let alpha = chol.solve(&vectorize_outputs(&y_cent));
        Ok(Self { bases, noise, input_transform, output_transform, data: data.clone(), x_std, chol, alpha })
    }

    pub fn bases(&self) -> &[LmcBasis] {
        &self.bases
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn training_data(&self) -> &Dataset {
        &self.data
    }

    /// Parameterization-derived free-parameter count for this model.
    pub fn parameter_count(&self) -> usize {
        actual_parameter_count(
            self.bases.len(),
            self.bases[0].rank(),
            self.data.output_dim(),
            self.data.input_dim(),
        )
    }

    /// The printed Q (D+1) (M+1) R accounting, reported as metadata.
    pub fn nominal_parameter_count(&self) -> usize {
        nominal_parameter_count(
            self.bases.len(),
            self.bases[0].rank(),
            self.data.output_dim(),
            self.data.input_dim(),
        )
    }

    /// Joint log likelihood of the training data in transformed space.
    pub fn log_likelihood(&self) -> f64 {
        let y_cent = self.output_transform.apply(self.data.outputs());
        let yv = vectorize_outputs(&y_cent);
        let nm = yv.len() as f64;
        -0.5 * yv.dot(&self.alpha) - 0.5 * self.chol.log_det() - 0.5 * nm * LN_TAU
    }

    /// Posterior prediction at new points; mean/variance come back vectorized
    /// output-major (see [`PosteriorPrediction::mean_matrix`]).
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
        let m = self.data.output_dim();
        let n_star = inputs.nrows();
        let xq = self.input_transform.apply(inputs);
        let k_star = lmc_full_covariance(&self.bases, 0.0, m, &xq, Some(&self.x_std))?;
        let mean_cent = &k_star * &self.alpha;
        let mut mean = DVector::zeros(mean_cent.len());
        for out in 0..m {
            for i in 0..n_star {
                mean[out * n_star + i] =
                    self.output_transform.invert_value(out, mean_cent[out * n_star + i]);
            }
        }

        let v = self.chol.solve_matrix(&k_star.transpose());
        let mut clamped = 0usize;
        let mut variance = DVector::zeros(mean_cent.len());
        for idx in 0..mean_cent.len() {
            let out = idx / n_star;
            let prior = self
                .bases
                .iter()
                .map(|b| {
                    let bmat = b.coregionalization_matrix();
                    bmat[(out, out)] * b.kernel.amplitude
                })
                .sum::<f64>()
                + self.noise;
            let reduction = k_star.row(idx).transpose().dot(&v.column(idx).into_owned());
            let mut var = prior - reduction;
            if var < 0.0 {
                var = 0.0;
                clamped += 1;
            }
            variance[idx] = self.output_transform.invert_variance(out, var);
        }

        let covariance = if full_covariance {
            let k_ss = lmc_full_covariance(&self.bases, self.noise, m, &xq, None)?;
            let mut cov = k_ss - &k_star * &v;
            for o1 in 0..m {
                for o2 in 0..m {
                    let s = self.output_transform.scales()[o1] * self.output_transform.scales()[o2];
                    if s != 1.0 {
                        let mut block = cov.view_mut((o1 * n_star, o2 * n_star), (n_star, n_star));
                        block *= s;
                    }
                }
            }
            Some(cov)
        } else {
            None
        };

        Ok(PosteriorPrediction { mean, variance, covariance, clamped_negative_variances: clamped })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), Error> {
        let meta = MogpMeta {
            bases: self.bases.clone(),
            noise: self.noise,
            outputs: self.data.output_dim(),
            input_transform: self.input_transform.clone(),
            output_transform: self.output_transform.clone(),
        };
        write_model(
            path,
            "mogp",
            serde_json::to_value(&meta)?,
            &[("train_inputs", self.data.inputs()), ("train_outputs", self.data.outputs())],
        )
    }

    pub fn load(path: &std::path::Path) -> Result<Self, Error> {
        let file = read_model(path)?;
        if file.kind != "mogp" {
            return Err(Error::CorruptFile(format!("expected a mogp model, found '{}'", file.kind)));
        }
        let meta: MogpMeta = serde_json::from_value(file.meta.clone())?;
        let inputs = require_array(&file, "train_inputs")?;
        let outputs = require_array(&file, "train_outputs")?;
        let data = Dataset::new(inputs, outputs)?;
        Self::fit_with_transforms(&data, meta.bases, meta.noise, meta.input_transform, meta.output_transform)
    }
}

impl Surrogate for MogpModel {
    fn input_dim(&self) -> usize {
        self.data.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.data.output_dim()
    }

    fn predict(
        &self,
        inputs: &DMatrix<f64>,
        full_covariance: bool,
    ) -> Result<PosteriorPrediction, Error> {
        MogpModel::predict(self, inputs, full_covariance)
    }

    /// Geometric mean of the basis length scales per dimension, mapped to
    /// original input units (exact for a single basis).
    fn length_scales(&self) -> Vec<f64> {
        let d = self.data.input_dim();
        let q = self.bases.len() as f64;
        (0..d)
            .map(|j| {
                let g: f64 =
                    self.bases.iter().map(|b| b.kernel.length_scales[j].ln()).sum::<f64>() / q;
                g.exp() * self.input_transform.scales()[j]
            })
            .collect()
    }
}

/// Packed log/raw parameter layout for training: per basis
/// [ln l (D), ln sigma^2, vec(A) (M R), ln lambda (M)], then ln tau^2.
struct Packing {
    q: usize,
    r: usize,
    m: usize,
    d: usize,
}

impl Packing {
    fn len(&self) -> usize {
        self.q * (self.d + 1 + self.m * (self.r + 1)) + 1
    }

    fn unpack(&self, theta: &[f64]) -> Result<(Vec<LmcBasis>, f64), Error> {
        let mut bases = Vec::with_capacity(self.q);
        let stride = self.d + 1 + self.m * (self.r + 1);
        for qi in 0..self.q {
            let base = qi * stride;
            let length_scales: Vec<f64> =
                theta[base..base + self.d].iter().map(|t| t.exp()).collect();
            let amplitude = theta[base + self.d].exp();
            let a_slice = &theta[base + self.d + 1..base + self.d + 1 + self.m * self.r];
            let a = DMatrix::from_column_slice(self.m, self.r, a_slice);
            let lam_slice =
                &theta[base + self.d + 1 + self.m * self.r..base + stride];
            let lambda: Vec<f64> = lam_slice.iter().map(|t| t.exp()).collect();
            bases.push(LmcBasis {
                a,
                lambda,
                kernel: ArdKernelParams::new(length_scales, amplitude, 0.0)?,
            });
        }
        let noise = theta[self.len() - 1].exp();
        Ok((bases, noise))
    }
}

/// Analytic gradient of the joint log likelihood with respect to the packed
/// parameters, via 1/2 tr[(alpha alpha^T - K^{-1}) dK/dtheta] evaluated
/// blockwise (the joint matrices are never differentiated entry-by-entry).
fn joint_log_likelihood_with_gradient(
    packing: &Packing,
    theta: &[f64],
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<(f64, Vec<f64>), Error> {
    let (bases, noise) = packing.unpack(theta)?;
    let m = packing.m;
    let n = x.nrows();
    let k = lmc_full_covariance(&bases, noise, m, x, None)?;
    let chol = cholesky_with_jitter(&k, 0.0)?;
    let yv = vectorize_outputs(y);
    let alpha = chol.solve(&yv);
    let nm = yv.len() as f64;
    let lml = -0.5 * yv.dot(&alpha) - 0.5 * chol.log_det() - 0.5 * nm * LN_TAU;

    // S = alpha alpha^T - K^{-1}; gradients are 1/2 sum(S .* dK).
    let mut s = chol.inverse();
    s.neg_mut();
    for i in 0..yv.len() {
        for j in 0..yv.len() {
            s[(i, j)] += alpha[i] * alpha[j];
        }
    }

    let mut grad = vec![0.0; packing.len()];
    let stride = packing.d + 1 + m * (packing.r + 1);
    for (qi, basis) in bases.iter().enumerate() {
        let noiseless = ArdKernelParams { noise: 0.0, ..basis.kernel.clone() };
        let kq = ard_covariance_matrix(&noiseless, x, None)?;
        let b = basis.coregionalization_matrix();

        // Block sums T[m1,m2] = sum(S_block(m1,m2) .* Kq), and the same with
        // the per-dimension length-scale weighting.
        let mut t = DMatrix::zeros(m, m);
        let mut t_len = vec![DMatrix::zeros(m, m); packing.d];
        for m1 in 0..m {
            for m2 in 0..m {
                let sblock = s.view((m1 * n, m2 * n), (n, n));
                let mut acc = 0.0;
                let mut acc_len = vec![0.0; packing.d];
                for i in 0..n {
                    for j in 0..n {
                        let w = sblock[(i, j)] * kq[(i, j)];
                        acc += w;
                        for dd in 0..packing.d {
                            let l = basis.kernel.length_scales[dd];
                            let delta = x[(i, dd)] - x[(j, dd)];
                            acc_len[dd] += w * delta * delta / (l * l);
                        }
                    }
                }
                t[(m1, m2)] = acc;
                for dd in 0..packing.d {
                    t_len[dd][(m1, m2)] = acc_len[dd];
                }
            }
        }

        let base = qi * stride;
        // d/d ln l_d: sum_{m1,m2} B[m1,m2] * T_len_d[m1,m2].
        for dd in 0..packing.d {
            let mut acc = 0.0;
            for m1 in 0..m {
                for m2 in 0..m {
                    acc += b[(m1, m2)] * t_len[dd][(m1, m2)];
                }
            }
            grad[base + dd] = 0.5 * acc;
        }
        // d/d ln sigma^2: dK = B (x) Kq.
        let mut acc = 0.0;
        for m1 in 0..m {
            for m2 in 0..m {
                acc += b[(m1, m2)] * t[(m1, m2)];
            }
        }
        grad[base + packing.d] = 0.5 * acc;
        // d/d A[m,r]: dB = e_m a_r^T + a_r e_m^T, so grad_A = T_sym A.
        let t_sym = (&t + t.transpose()) * 0.5;
        let grad_a = &t_sym * &basis.a;
        for rr in 0..packing.r {
            for mm in 0..m {
                grad[base + packing.d + 1 + rr * m + mm] = grad_a[(mm, rr)];
            }
        }
        // d/d ln lambda_m: dB = e_m e_m^T, times lambda for the log reparam.
        for mm in 0..m {
            grad[base + packing.d + 1 + packing.r * m + mm] =
                0.5 * t[(mm, mm)] * basis.lambda[mm];
        }
    }
    // d/d ln tau^2 = 1/2 tau^2 tr(S).
    let tr: f64 = (0..yv.len()).map(|i| s[(i, i)]).sum();
    grad[packing.len() - 1] = 0.5 * noise * tr;

    Ok((lml, grad))
}

/// Training configuration: basis count Q, mixing rank R, and the optimizer.
#[derive(Clone, Debug)]
pub struct MogpTrainConfig {
    pub bases: usize,
    pub rank: usize,
    pub adam: AdamConfig,
    /// Rows per stochastic objective evaluation; None = full batch.
    pub batch_size: Option<usize>,
}

impl Default for MogpTrainConfig {
    fn default() -> Self {
        Self { bases: 1, rank: 1, adam: AdamConfig::default(), batch_size: None }
    }
}

#[derive(Clone, Debug)]
pub struct MogpFitReport {
    pub objective_trace: Vec<f64>,
    pub final_log_likelihood: f64,
}

/// Optimizes coregionalization hyperparameters with Adam in packed log/raw
/// space.
///
/// Initialization: unit length scales and amplitudes, mixing entries drawn
/// from N(0, 0.1^2), per-output nuggets at the centered-output variances,
/// shared noise at 1% of their mean.
pub fn train_mogp(
    data: &Dataset,
    cfg: &MogpTrainConfig,
    rng: &mut RngStream,
) -> Result<(MogpModel, MogpFitReport), Error> {
    if cfg.bases == 0 || cfg.rank == 0 {
        return Err(Error::InvalidConfig("bases and rank must be positive".into()));
    }
    let input_transform = ColumnTransform::standardizing(data.inputs());
    let output_transform = ColumnTransform::centering(data.outputs());
    let x_std = input_transform.apply(data.inputs());
    let y_cent = output_transform.apply(data.outputs());
    let m = data.output_dim();
    let d = data.input_dim();
    let packing = Packing { q: cfg.bases, r: cfg.rank, m, d };

    let n = data.len() as f64;
    let out_vars: Vec<f64> =
        (0..m).map(|j| (y_cent.column(j).dot(&y_cent.column(j)) / n).max(1e-12)).collect();
    let mean_var = out_vars.iter().sum::<f64>() / m as f64;

    let mut init = Vec::with_capacity(packing.len());
    use rand_distr::Distribution;
    let normal = rand_distr::Normal::new(0.0, 0.1).expect("valid");
    for _ in 0..cfg.bases {
        init.extend(std::iter::repeat_n(0.0, d)); // ln l = 0
        init.push(0.0); // ln sigma^2 = 0
        for _ in 0..m * cfg.rank {
            init.push(normal.sample(rng));
        }
        for var in &out_vars {
            init.push(var.ln());
        }
    }
    init.push((0.01 * mean_var).ln());

    let batch = cfg.batch_size.unwrap_or(data.len()).min(data.len());
    if batch == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let full = batch >= data.len();
    let mut batch_rng = rng.substream(rng.stream_id() ^ 0x6b0_u64.rotate_left(23));
    let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>), Error> {
        let (lml, grad) = if full {
            joint_log_likelihood_with_gradient(&packing, theta, &x_std, &y_cent)?
        } else {
            let idx = minibatch_indices(x_std.nrows(), batch, &mut batch_rng);
            let xb = DMatrix::from_fn(idx.len(), d, |i, j| x_std[(idx[i], j)]);
            let yb = DMatrix::from_fn(idx.len(), m, |i, j| y_cent[(idx[i], j)]);
            joint_log_likelihood_with_gradient(&packing, theta, &xb, &yb)?
        };
        Ok((-lml, grad.iter().map(|g| -g).collect()))
    };
    let res = adam_optimize(objective, &init, &cfg.adam)?;
    let (bases, noise) = packing.unpack(&res.parameters)?;
    let model = MogpModel::fit_with_transforms(data, bases, noise, input_transform, output_transform)?;
    let final_log_likelihood = model.log_likelihood();
    Ok((model, MogpFitReport { objective_trace: res.trace, final_log_likelihood }))
}
