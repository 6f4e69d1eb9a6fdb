//! One-hidden-layer deep Gaussian process trained by a Metropolis-within-
//! Gibbs scheme with elliptical slice updates for the latent layer.
//!
//! Inputs X map to N x p latents W (one GP prior per latent column, unit
//! amplitude, length scales only), and a standard GP maps W to the output.
//! The compound log likelihood is the outer marginal likelihood plus the sum
//! of latent-column prior densities. Prediction propagates posterior latent
//! means per retained draw and moment-matches across draws: mean of means,
//! variance = mean of variances + variance of means.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnTransform, Dataset, PosteriorPrediction};
use crate::error::Error;
use crate::gp::{log_marginal_likelihood, GpModel};
use crate::kernels::{ard_covariance_matrix, ArdKernelParams};
use crate::numerics::{cholesky_with_jitter, RngStream};
use crate::surrogate::{read_model, require_array, write_model, Surrogate};

/// Fixed stabilizing jitter on hidden-layer priors (their kernels carry no
/// noise term of their own).
pub const HIDDEN_JITTER: f64 = 1e-8;

/// Hyperparameter bounds for the Metropolis updates, uniform in log space.
const LOG_BOUND_LOW: f64 = -18.420680743952367; // ln 1e-8
const LOG_BOUND_HIGH: f64 = 4.605170185988092; // ln 1e2

/// One configuration of the chain: latent matrix plus both layers'
/// hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DgpState {
    /// N x p latent matrix W; column i is latent node i.
    pub latents: DMatrix<f64>,
    /// Kernel of the outer (latents -> output) layer.
    pub outer_params: ArdKernelParams,
    /// Per-latent-node length scales over the original input dimensions.
    pub hidden_length_scales: Vec<Vec<f64>>,
}

impl DgpState {
    pub fn hidden_nodes(&self) -> usize {
        self.latents.ncols()
    }

    pub fn validate(&self, n: usize, input_dim: usize) -> Result<(), Error> {
        let p = self.hidden_nodes();
        if p == 0 {
            return Err(Error::InvalidConfig("at least one hidden node".into()));
        }
        if self.latents.nrows() != n || self.hidden_length_scales.len() != p {
            return Err(Error::DimensionMismatch("latent matrix shape".into()));
        }
        if self.latents.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("latents must be finite".into()));
        }
        self.outer_params.validate()?;
        if self.outer_params.dim() != p {
            return Err(Error::DimensionMismatch("outer kernel dimension".into()));
        }
        for ls in &self.hidden_length_scales {
            if ls.len() != input_dim || ls.iter().any(|l| !(*l > 0.0)) {
                return Err(Error::NonPositiveParameter("hidden length scales".into()));
            }
        }
        Ok(())
    }
}

fn hidden_kernel(length_scales: &[f64]) -> ArdKernelParams {
    ArdKernelParams { length_scales: length_scales.to_vec(), amplitude: 1.0, noise: HIDDEN_JITTER }
}

/// Outer marginal likelihood of the (centered) output given the latents plus
/// the latent-column prior densities given the (standardized) inputs.
pub fn compound_log_likelihood(
    state: &DgpState,
    x_std: &DMatrix<f64>,
    y_cent: &DVector<f64>,
) -> Result<f64, Error> {
    let mut total = log_marginal_likelihood(&state.outer_params, &state.latents, y_cent)?;
    for (i, ls) in state.hidden_length_scales.iter().enumerate() {
        let col = state.latents.column(i).into_owned();
        total += log_marginal_likelihood(&hidden_kernel(ls), x_std, &col)?;
    }
    Ok(total)
}

/// Elliptical slice update: samples the ellipse through the current state and
/// a prior draw, shrinking the angle bracket toward zero until the slice
/// threshold is met. Returns the accepted state and the rejection count.
///
/// The threshold is ln u below the current log likelihood, so acceptance is
/// guaranteed as the bracket collapses onto the current state.
pub fn ess_update(
    current: &DVector<f64>,
    prior_draw: &DVector<f64>,
    mut log_lik: impl FnMut(&DVector<f64>) -> Result<f64, Error>,
    rng: &mut RngStream,
) -> Result<(DVector<f64>, usize), Error> {
    use rand::Rng;
    let threshold = log_lik(current)? + rng.random::<f64>().ln();
    let mut gamma = rng.random_range(0.0..std::f64::consts::TAU);
    let mut gamma_min = gamma - std::f64::consts::TAU;
    let mut gamma_max = gamma;
    let mut rejections = 0usize;
    loop {
        let proposal = current * gamma.cos() + prior_draw * gamma.sin();
        if log_lik(&proposal)? > threshold {
            return Ok((proposal, rejections));
        }
        rejections += 1;
        if gamma < 0.0 {
            gamma_min = gamma;
        } else {
            gamma_max = gamma;
        }
        gamma = rng.random_range(gamma_min..gamma_max);
        if rejections > 10_000 {
            // The bracket has collapsed to numerical zero around the current
            // state; keep it rather than loop on denormal angles.
            return Ok((current.clone(), rejections));
        }
    }
}

/// Sampler settings. `hidden_nodes` defaults to the input dimension.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DgpConfig {
    pub samples: usize,
    pub burn_in_fraction: f64,
    pub thinning: usize,
    pub hidden_nodes: Option<usize>,
    /// Random-walk scale for the log-space Metropolis proposals.
    pub proposal_scale: f64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            burn_in_fraction: 0.5,
            thinning: 10,
            hidden_nodes: None,
            proposal_scale: 0.3,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.samples == 0 || self.thinning == 0 {
            return Err(Error::InvalidConfig("samples and thinning must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::InvalidConfig("burn-in fraction must lie in [0, 1)".into()));
        }
        if self.hidden_nodes == Some(0) {
            return Err(Error::InvalidConfig("at least one hidden node".into()));
        }
        if !(self.proposal_scale >= 0.0) {
            return Err(Error::InvalidConfig("proposal scale must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct GibbsStepStats {
    pub outer_amplitude_noise_accepted: bool,
    pub outer_length_scales_accepted: bool,
    pub hidden_length_scales_accepted: usize,
    pub ess_rejections: usize,
}

fn propose_log_walk(values: &[f64], scale: f64, rng: &mut RngStream) -> Option<Vec<f64>> {
    use rand_distr::Distribution;
    let normal = rand_distr::StandardNormal;
    let mut out = Vec::with_capacity(values.len());
    for v in values {
        let z: f64 = normal.sample(rng);
        // Multiplicative form of the log-space walk: exact identity at
        // scale 0, so degenerate proposals leave values bit-identical.
        let proposed = v * (scale * z).exp();
        if !(LOG_BOUND_LOW..=LOG_BOUND_HIGH).contains(&proposed.ln()) {
            return None;
        }
        out.push(proposed);
    }
    Some(out)
}

fn mh_accept(delta: f64, rng: &mut RngStream) -> bool {
    use rand::Rng;
    rng.random::<f64>().ln() < delta
}

/// One Metropolis-within-Gibbs sweep: amplitude/noise, then outer length
/// scales, then each latent node's length scales, then an elliptical slice
/// update of each latent column under fresh hyperparameters.
pub fn gibbs_step(
    state: &DgpState,
    x_std: &DMatrix<f64>,
    y_cent: &DVector<f64>,
    proposal_scale: f64,
    rng: &mut RngStream,
) -> Result<(DgpState, GibbsStepStats), Error> {
    let mut next = state.clone();
    let mut stats = GibbsStepStats::default();
    let p = next.hidden_nodes();

    // Amplitude and noise of the outer layer, jointly.
    let mut outer_lik = log_marginal_likelihood(&next.outer_params, &next.latents, y_cent)?;
    if let Some(new) =
        propose_log_walk(&[next.outer_params.amplitude, next.outer_params.noise], proposal_scale, rng)
    {
        let candidate =
            ArdKernelParams { amplitude: new[0], noise: new[1], ..next.outer_params.clone() };
        let lik = log_marginal_likelihood(&candidate, &next.latents, y_cent)?;
        if mh_accept(lik - outer_lik, rng) {
            next.outer_params = candidate;
            outer_lik = lik;
            stats.outer_amplitude_noise_accepted = true;
        }
    }

    // Outer length scales, jointly.
    if let Some(new) = propose_log_walk(&next.outer_params.length_scales, proposal_scale, rng) {
        let candidate = ArdKernelParams { length_scales: new, ..next.outer_params.clone() };
        let lik = log_marginal_likelihood(&candidate, &next.latents, y_cent)?;
        if mh_accept(lik - outer_lik, rng) {
            next.outer_params = candidate;
            stats.outer_length_scales_accepted = true;
        }
    }

    // Each latent node's length scales against its own prior term.
    for i in 0..p {
        let col = next.latents.column(i).into_owned();
        if let Some(new) = propose_log_walk(&next.hidden_length_scales[i], proposal_scale, rng) {
            let cur = log_marginal_likelihood(&hidden_kernel(&next.hidden_length_scales[i]), x_std, &col)?;
            let cand = log_marginal_likelihood(&hidden_kernel(&new), x_std, &col)?;
            if mh_accept(cand - cur, rng) {
                next.hidden_length_scales[i] = new;
                stats.hidden_length_scales_accepted += 1;
            }
        }
    }

    // Elliptical slice update of each latent column.
    use rand_distr::Distribution;
    let normal = rand_distr::StandardNormal;
    for i in 0..p {
        let k = ard_covariance_matrix(&hidden_kernel(&next.hidden_length_scales[i]), x_std, None)?;
        let chol = cholesky_with_jitter(&k, 0.0)?;
        let z = DVector::from_fn(x_std.nrows(), |_, _| normal.sample(rng));
        let prior_draw = chol.lower() * z;
        let current = next.latents.column(i).into_owned();
        let outer = next.outer_params.clone();
        let latents = next.latents.clone();
        let log_lik = |w: &DVector<f64>| -> Result<f64, Error> {
            let mut trial = latents.clone();
            trial.set_column(i, w);
            log_marginal_likelihood(&outer, &trial, y_cent)
        };
        let (accepted, rejections) = ess_update(&current, &prior_draw, log_lik, rng)?;
        next.latents.set_column(i, &accepted);
        stats.ess_rejections += rejections;
    }

    Ok((next, stats))
}

#[derive(Serialize, Deserialize)]
struct DgpDrawMeta {
    outer_params: ArdKernelParams,
    hidden_length_scales: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct DgpMeta {
    draws: Vec<DgpDrawMeta>,
    burn_in: usize,
    thinning: usize,
    input_transform: ColumnTransform,
    output_transform: ColumnTransform,
}

/// Retained posterior draws plus the training data they condition on.
#[derive(Clone, Debug)]
pub struct DgpModel {
    draws: Vec<DgpState>,
    burn_in: usize,
    thinning: usize,
    input_transform: ColumnTransform,
    output_transform: ColumnTransform,
    data: Dataset,
    x_std: DMatrix<f64>,
    y_cent: DVector<f64>,
}

impl DgpModel {
    /// Assembles a model from externally built draws (all validated against
    /// the data shape).
    pub fn from_draws(
        data: &Dataset,
        draws: Vec<DgpState>,
        burn_in: usize,
        thinning: usize,
    ) -> Result<Self, Error> {
        let input_transform = ColumnTransform::standardizing(data.inputs());
        let output_transform = ColumnTransform::centering(data.outputs());
        Self::from_parts(data, draws, burn_in, thinning, input_transform, output_transform)
    }

    fn from_parts(
        data: &Dataset,
        draws: Vec<DgpState>,
        burn_in: usize,
        thinning: usize,
        input_transform: ColumnTransform,
        output_transform: ColumnTransform,
    ) -> Result<Self, Error> {
        if data.output_dim() != 1 {
            return Err(Error::DimensionMismatch("deep GP expects a single output".into()));
        }
        if draws.is_empty() {
            return Err(Error::EmptyData("retained posterior draws".into()));
        }
        for d in &draws {
            d.validate(data.len(), data.input_dim())?;
        }
        let x_std = input_transform.apply(data.inputs());
        let y_cent = output_transform.apply(data.outputs()).column(0).into_owned();
        Ok(Self {
            draws,
            burn_in,
            thinning,
            input_transform,
            output_transform,
            data: data.clone(),
            x_std,
            y_cent,
        })
    }

    pub fn draws(&self) -> &[DgpState] {
        &self.draws
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn thinning(&self) -> usize {
        self.thinning
    }

    pub fn training_data(&self) -> &Dataset {
        &self.data
    }

    /// Posterior latent means at standardized query points for one draw.
    ///
    /// Hidden-layer solves attempt a zero-jitter factorization first so a
    /// latent layer equal to the inputs reproduces them to solver precision.
    fn latent_means(&self, draw: &DgpState, xq_std: &DMatrix<f64>) -> Result<DMatrix<f64>, Error> {
        let p = draw.hidden_nodes();
        let mut w_star = DMatrix::zeros(xq_std.nrows(), p);
        for i in 0..p {
            let params = ArdKernelParams {
                length_scales: draw.hidden_length_scales[i].clone(),
                amplitude: 1.0,
                noise: 0.0,
            };
            let k = ard_covariance_matrix(&params, &self.x_std, None)?;
            let chol = cholesky_with_jitter(&k, 0.0)?;
            let alpha = chol.solve(&draw.latents.column(i).into_owned());
            let k_star = ard_covariance_matrix(&params, xq_std, Some(&self.x_std))?;
            w_star.set_column(i, &(&k_star * &alpha));
        }
        Ok(w_star)
    }

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
        let xq_std = self.input_transform.apply(inputs);
        let n_star = inputs.nrows();
        let s = self.draws.len() as f64;

        let mut mean_sum: DVector<f64> = DVector::zeros(n_star);
        let mut mean_sq_sum: DVector<f64> = DVector::zeros(n_star);
        let mut var_sum: DVector<f64> = DVector::zeros(n_star);
        let mut cov_sum = full_covariance.then(|| DMatrix::zeros(n_star, n_star));
        let mut clamped = 0usize;

        for draw in &self.draws {
            let w_star = self.latent_means(draw, &xq_std)?;
            let outer_data = Dataset::univariate(draw.latents.clone(), self.y_cent.clone())?;
            let p = draw.hidden_nodes();
            let outer = GpModel::fit_with_transforms(
                &outer_data,
                draw.outer_params.clone(),
                ColumnTransform::identity(p),
                ColumnTransform::identity(1),
            )?;
            let pred = outer.predict(&w_star, full_covariance)?;
            clamped += pred.clamped_negative_variances;
            for i in 0..n_star {
                mean_sum[i] += pred.mean[i];
                mean_sq_sum[i] += pred.mean[i] * pred.mean[i];
                var_sum[i] += pred.variance[i];
            }
            if let (Some(acc), Some(cov)) = (cov_sum.as_mut(), pred.covariance.as_ref()) {
                *acc += cov;
                for i in 0..n_star {
                    for j in 0..n_star {
                        acc[(i, j)] += pred.mean[i] * pred.mean[j];
                    }
                }
            }
        }

        let mut mean = DVector::zeros(n_star);
        let mut variance = DVector::zeros(n_star);
        for i in 0..n_star {
            let m: f64 = mean_sum[i] / s;
            let between = (mean_sq_sum[i] / s - m * m).max(0.0);
            mean[i] = self.output_transform.invert_value(0, m);
            variance[i] = self.output_transform.invert_variance(0, var_sum[i] / s + between);
        }
        let covariance = cov_sum.map(|acc| {
            let scale = self.output_transform.scales()[0];
            let mut cov = acc / s;
            for i in 0..n_star {
                for j in 0..n_star {
                    cov[(i, j)] -= (mean_sum[i] / s) * (mean_sum[j] / s);
                    cov[(i, j)] *= scale * scale;
                }
            }
            cov
        });
        Ok(PosteriorPrediction { mean, variance, covariance, clamped_negative_variances: clamped })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), Error> {
        let meta = DgpMeta {
            draws: self
                .draws
                .iter()
                .map(|d| DgpDrawMeta {
                    outer_params: d.outer_params.clone(),
                    hidden_length_scales: d.hidden_length_scales.clone(),
                })
                .collect(),
            burn_in: self.burn_in,
            thinning: self.thinning,
            input_transform: self.input_transform.clone(),
            output_transform: self.output_transform.clone(),
        };
        let p = self.draws[0].hidden_nodes();
        let n = self.data.len();
        let mut latents = DMatrix::zeros(self.draws.len() * n, p);
        for (s, draw) in self.draws.iter().enumerate() {
            latents.view_mut((s * n, 0), (n, p)).copy_from(&draw.latents);
        }
        write_model(
            path,
            "dgp",
            serde_json::to_value(&meta)?,
            &[
                ("train_inputs", self.data.inputs()),
                ("train_outputs", self.data.outputs()),
                ("latent_draws", &latents),
            ],
        )
    }

    pub fn load(path: &std::path::Path) -> Result<Self, Error> {
        let file = read_model(path)?;
        if file.kind != "dgp" {
            return Err(Error::CorruptFile(format!("expected a dgp model, found '{}'", file.kind)));
        }
        let meta: DgpMeta = serde_json::from_value(file.meta.clone())?;
        let inputs = require_array(&file, "train_inputs")?;
        let outputs = require_array(&file, "train_outputs")?;
        let latents = require_array(&file, "latent_draws")?;
        let data = Dataset::new(inputs, outputs)?;
        let n = data.len();
        if meta.draws.is_empty() || latents.nrows() != meta.draws.len() * n {
            return Err(Error::CorruptFile("latent draw block count".into()));
        }
        let draws = meta
            .draws
            .into_iter()
            .enumerate()
            .map(|(s, d)| DgpState {
                latents: latents.view((s * n, 0), (n, latents.ncols())).into_owned(),
                outer_params: d.outer_params,
                hidden_length_scales: d.hidden_length_scales,
            })
            .collect();
        Self::from_parts(
            &data,
            draws,
            meta.burn_in,
            meta.thinning,
            meta.input_transform,
            meta.output_transform,
        )
    }
}

impl Surrogate for DgpModel {
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
        DgpModel::predict(self, inputs, full_covariance)
    }

    /// Heuristic input-space scales: geometric mean of the hidden-layer
    /// length scales over draws and nodes, in original units.
    fn length_scales(&self) -> Vec<f64> {
        let d = self.data.input_dim();
        let mut log_sum = vec![0.0; d];
        let mut count = 0usize;
        for draw in &self.draws {
            for ls in &draw.hidden_length_scales {
                for j in 0..d {
                    log_sum[j] += ls[j].ln();
                }
                count += 1;
            }
        }
        (0..d)
            .map(|j| (log_sum[j] / count as f64).exp() * self.input_transform.scales()[j])
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct DgpFitReport {
    pub compound_log_likelihood_trace: Vec<f64>,
    pub outer_amplitude_noise_acceptance: f64,
    pub outer_length_scales_acceptance: f64,
    pub hidden_length_scales_acceptance: f64,
    pub mean_ess_rejections: f64,
}

/// Runs the Gibbs chain from a deterministic start (latents = standardized
/// input columns, unit length scales, amplitude at the output variance) and
/// retains every `thinning`-th state after burn-in.
pub fn train_dgp(
    data: &Dataset,
    cfg: &DgpConfig,
    rng: &mut RngStream,
) -> Result<(DgpModel, DgpFitReport), Error> {
    cfg.validate()?;
    if data.output_dim() != 1 {
        return Err(Error::DimensionMismatch("deep GP expects a single output".into()));
    }
    let d = data.input_dim();
    let p = cfg.hidden_nodes.unwrap_or(d);
    let input_transform = ColumnTransform::standardizing(data.inputs());
    let output_transform = ColumnTransform::centering(data.outputs());
    let x_std = input_transform.apply(data.inputs());
    let y_cent = output_transform.apply(data.outputs()).column(0).into_owned();
    let n = data.len();

    let latents = DMatrix::from_fn(n, p, |i, j| x_std[(i, j % d)]);
    let y_var = (y_cent.dot(&y_cent) / n as f64).clamp(1e-6, 99.0);
    let state0 = DgpState {
        latents,
        outer_params: ArdKernelParams::new(vec![1.0; p], y_var, (0.01 * y_var).max(1e-6))?,
        hidden_length_scales: vec![vec![1.0; d]; p],
    };
    state0.validate(n, d)?;

    let burn_in = ((cfg.samples as f64) * cfg.burn_in_fraction).floor() as usize;
    let mut state = state0;
    let mut draws = Vec::new();
    let mut trace = Vec::with_capacity(cfg.samples);
    let mut acc = [0usize; 2];
    let mut hidden_acc = 0usize;
    let mut ess_rej = 0usize;
    for t in 0..cfg.samples {
        let (next, stats) = gibbs_step(&state, &x_std, &y_cent, cfg.proposal_scale, rng)?;
        state = next;
        acc[0] += stats.outer_amplitude_noise_accepted as usize;
        acc[1] += stats.outer_length_scales_accepted as usize;
        hidden_acc += stats.hidden_length_scales_accepted;
        ess_rej += stats.ess_rejections;
        trace.push(compound_log_likelihood(&state, &x_std, &y_cent)?);
        if t >= burn_in && (t - burn_in) % cfg.thinning == 0 {
            draws.push(state.clone());
        }
    }

    let total = cfg.samples as f64;
    let report = DgpFitReport {
        compound_log_likelihood_trace: trace,
        outer_amplitude_noise_acceptance: acc[0] as f64 / total,
        outer_length_scales_acceptance: acc[1] as f64 / total,
        hidden_length_scales_acceptance: hidden_acc as f64 / (total * p as f64),
        mean_ess_rejections: ess_rej as f64 / (total * p as f64),
    };
    let model =
        DgpModel::from_parts(data, draws, burn_in, cfg.thinning, input_transform, output_transform)?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn toy_data(n: usize, seed: u64) -> Dataset {
        let mut rng = RngStream::new(seed, 0);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (1.3 * x).sin() + 0.1 * x).collect();
        Dataset::univariate(
            DMatrix::from_column_slice(n, 1, &xs),
            DVector::from_column_slice(&ys),
        )
        .unwrap()
    }

    fn identity_state(x_std: &DMatrix<f64>, outer: ArdKernelParams) -> DgpState {
        let d = x_std.ncols();
        DgpState {
            latents: x_std.clone(),
            outer_params: outer,
            hidden_length_scales: vec![vec![1.0; d]; d],
        }
    }

    #[test]
    fn compound_likelihood_splits_into_layer_terms() {
        let data = toy_data(7, 31);
        let input_transform = ColumnTransform::standardizing(data.inputs());
        let output_transform = ColumnTransform::centering(data.outputs());
        let x_std = input_transform.apply(data.inputs());
        let y_cent = output_transform.apply(data.outputs()).column(0).into_owned();
        let outer = ArdKernelParams::new(vec![0.9], 1.1, 0.04).unwrap();
        let state = identity_state(&x_std, outer.clone());

        let total = compound_log_likelihood(&state, &x_std, &y_cent).unwrap();
        let outer_term = log_marginal_likelihood(&outer, &x_std, &y_cent).unwrap();

        // Hidden term via a dense multivariate-normal oracle.
        let params = ArdKernelParams::new(vec![1.0], 1.0, 0.0).unwrap();
        let mut k = ard_covariance_matrix(&params, &x_std, None).unwrap();
        for i in 0..7 {
            k[(i, i)] += HIDDEN_JITTER;
        }
        let kinv = k.clone().try_inverse().unwrap();
        let w = x_std.column(0).into_owned();
        let quad = (w.transpose() * &kinv * &w)[(0, 0)];
        let hidden_oracle =
            -0.5 * quad - 0.5 * k.determinant().ln() - 3.5 * (2.0 * std::f64::consts::PI).ln();

        assert!(total.is_finite());
        assert_relative_eq!(total - outer_term, hidden_oracle, max_relative = 1e-9);
    }

    #[test]
    fn zero_output_drops_outer_quadratic_term() {
        let n = 6;
        let x = DMatrix::from_column_slice(n, 1, &[-2.0, -1.2, -0.4, 0.4, 1.2, 2.0]);
        let y = DVector::zeros(n);
        let outer = ArdKernelParams::new(vec![0.8], 1.4, 0.05).unwrap();
        let lik = log_marginal_likelihood(&outer, &x, &y).unwrap();
        let k = ard_covariance_matrix(&outer, &x, None).unwrap();
        let expected =
            -0.5 * k.determinant().ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        assert_relative_eq!(lik, expected, max_relative = 1e-10);
    }

    #[test]
    fn doubling_noise_hurts_interpolating_fit() {
        let data = toy_data(9, 32);
        let x = data.inputs();
        let y = data.outputs().column(0).into_owned();
        let small = ArdKernelParams::new(vec![0.8], 1.0, 1e-4).unwrap();
        let double = ArdKernelParams { noise: 2e-4, ..small.clone() };
        let l1 = log_marginal_likelihood(&small, x, &y).unwrap();
        let l2 = log_marginal_likelihood(&double, x, &y).unwrap();
        assert!(l2 < l1, "noise doubling should lower likelihood: {l1} vs {l2}");
    }

    #[test]
    fn ess_constant_likelihood_accepts_first_on_ellipse() {
        let mut rng = RngStream::new(33, 0);
        let current = DVector::from_column_slice(&[1.0, -0.5, 0.25]);
        let prior = DVector::from_column_slice(&[0.3, 0.8, -0.6]);
        let (accepted, rejections) =
            ess_update(&current, &prior, |_| Ok(0.0), &mut rng).unwrap();
        assert_eq!(rejections, 0);
        // The result lies in span{current, prior} with cos^2 + sin^2 = 1.
        let basis = DMatrix::from_columns(&[current.clone(), prior.clone()]);
        let coeffs = (basis.transpose() * &basis)
            .try_inverse()
            .unwrap()
            * basis.transpose()
            * &accepted;
        let recon = &basis * &coeffs;
        assert!((&recon - &accepted).norm() < 1e-10);
        assert_relative_eq!(coeffs[0] * coeffs[0] + coeffs[1] * coeffs[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn ess_peaked_likelihood_shrinks_toward_current() {
        let mut rng = RngStream::new(34, 0);
        let current = DVector::from_column_slice(&[0.7, -0.2]);
        let prior = DVector::from_column_slice(&[-1.5, 2.0]);
        let mut widths = Vec::new();
        let mut last_proposal_distance = f64::INFINITY;
        let (accepted, rejections) = ess_update(
            &current,
            &prior,
            |w| {
                let d = (w - &current).norm();
                last_proposal_distance = d;
                widths.push(d);
                Ok(-1e4 * d * d)
            },
            &mut rng,
        )
        .unwrap();
        assert!(rejections > 0, "peaked target should reject the first angles");
        assert!((accepted - &current).norm() < 0.05);
        // Proposal distances cannot grow once the bracket starts shrinking
        // around zero; check the trace ends closer than it began.
        assert!(widths.last().unwrap() < &widths[1]);
    }

    #[test]
    fn gibbs_zero_proposal_scale_moves_only_latents() {
        let data = toy_data(8, 35);
        let input_transform = ColumnTransform::standardizing(data.inputs());
        let x_std = input_transform.apply(data.inputs());
        let y_cent = ColumnTransform::centering(data.outputs())
            .apply(data.outputs())
            .column(0)
            .into_owned();
        let state = identity_state(&x_std, ArdKernelParams::new(vec![1.0], 1.0, 0.01).unwrap());
        let mut rng = RngStream::new(36, 0);
        let (next, stats) = gibbs_step(&state, &x_std, &y_cent, 0.0, &mut rng).unwrap();
        // Zero-scale proposals stay at the current point, so the likelihood
        // ratio is 1 and the values are bit-identical either way.
        assert_eq!(next.outer_params.amplitude, state.outer_params.amplitude);
        assert_eq!(next.outer_params.noise, state.outer_params.noise);
        assert_eq!(next.outer_params.length_scales, state.outer_params.length_scales);
        assert_eq!(next.hidden_length_scales, state.hidden_length_scales);
        assert!(next.latents != state.latents, "latents should move");
        let _ = stats;
    }

    #[test]
    fn gibbs_step_is_reproducible() {
        let data = toy_data(8, 37);
        let input_transform = ColumnTransform::standardizing(data.inputs());
        let x_std = input_transform.apply(data.inputs());
        let y_cent = ColumnTransform::centering(data.outputs())
            .apply(data.outputs())
            .column(0)
            .into_owned();
        let state = identity_state(&x_std, ArdKernelParams::new(vec![1.0], 1.0, 0.01).unwrap());
        let run = |seed| {
            let mut rng = RngStream::new(seed, 3);
            let mut s = state.clone();
            for _ in 0..5 {
                s = gibbs_step(&s, &x_std, &y_cent, 0.3, &mut rng).unwrap().0;
            }
            s
        };
        let a = run(99);
        let b = run(99);
        assert_eq!(a.latents, b.latents);
        assert_eq!(a.outer_params.length_scales, b.outer_params.length_scales);
        assert_eq!(a.outer_params.amplitude, b.outer_params.amplitude);
        assert_eq!(a.hidden_length_scales, b.hidden_length_scales);
    }

    #[test]
    fn ess_with_constant_likelihood_preserves_the_prior() {
        // Kolmogorov-Smirnov check that repeated elliptical updates under a
        // constant likelihood leave the first coordinate marginally standard
        // normal (covariance diagonal is 1 + jitter).
        let n = 4;
        let x = DMatrix::from_column_slice(n, 1, &[-1.5, -0.5, 0.5, 1.5]);
        let params = ArdKernelParams::new(vec![0.7], 1.0, HIDDEN_JITTER).unwrap();
        let k = ard_covariance_matrix(&params, &x, None).unwrap();
        let chol = cholesky_with_jitter(&k, 0.0).unwrap();
        let mut rng = RngStream::new(38, 0);
        use rand_distr::Distribution;
        let normal = rand_distr::StandardNormal;

        let draw_prior = |rng: &mut RngStream| {
            let z = DVector::from_fn(n, |_, _| {
                let v: f64 = normal.sample(rng);
                v
            });
            chol.lower() * z
        };
        let mut w = draw_prior(&mut rng);
        let steps = 5000;
        let mut samples = Vec::with_capacity(steps);
        for _ in 0..steps {
            let nu = draw_prior(&mut rng);
            w = ess_update(&w, &nu, |_| Ok(0.0), &mut rng).unwrap().0;
            samples.push(w[0]);
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let sd = (1.0 + HIDDEN_JITTER).sqrt();
        let mut d_stat: f64 = 0.0;
        for (i, s) in samples.iter().enumerate() {
            let cdf = crate::distributions::standard_normal_cdf(s / sd);
            let hi = (i + 1) as f64 / steps as f64 - cdf;
            let lo = cdf - i as f64 / steps as f64;
            d_stat = d_stat.max(hi.max(lo));
        }
        // 1% critical value for the one-sample KS statistic.
        let critical = 1.628 / (steps as f64).sqrt();
        assert!(d_stat < critical, "KS statistic {d_stat} vs {critical}");
    }

    #[test]
    fn identity_draw_matches_plain_gp_at_training_points() {
        let data = toy_data(10, 39);
        let outer = ArdKernelParams::new(vec![0.9], 1.2, 0.03).unwrap();
        let gp = GpModel::fit(&data, outer.clone()).unwrap();

        let input_transform = ColumnTransform::standardizing(data.inputs());
        let x_std = input_transform.apply(data.inputs());
        let draw = identity_state(&x_std, outer);
        let model = DgpModel::from_draws(&data, vec![draw], 0, 1).unwrap();

        let pg = gp.predict(data.inputs(), false).unwrap();
        let pd = model.predict(data.inputs(), false).unwrap();
        for i in 0..data.len() {
            assert!((pg.mean[i] - pd.mean[i]).abs() < 1e-8, "mean {i}");
            assert!((pg.variance[i] - pd.variance[i]).abs() < 1e-8, "variance {i}");
        }
    }

    #[test]
    fn single_draw_interpolates_with_zero_noise() {
        let data = toy_data(8, 40);
        let input_transform = ColumnTransform::standardizing(data.inputs());
        let x_std = input_transform.apply(data.inputs());
        let draw = identity_state(&x_std, ArdKernelParams::new(vec![0.8], 1.0, 0.0).unwrap());
        let model = DgpModel::from_draws(&data, vec![draw], 0, 1).unwrap();
        let pred = model.predict(data.inputs(), false).unwrap();
        for i in 0..data.len() {
            assert!((pred.mean[i] - data.outputs()[(i, 0)]).abs() < 1e-6);
        }
    }

    #[test]
    fn duplicate_draws_add_no_between_draw_variance() {
        let data = toy_data(8, 41);
        let input_transform = ColumnTransform::standardizing(data.inputs());
        let x_std = input_transform.apply(data.inputs());
        let draw = identity_state(&x_std, ArdKernelParams::new(vec![0.8], 1.0, 0.02).unwrap());
        let single = DgpModel::from_draws(&data, vec![draw.clone()], 0, 1).unwrap();
        let double = DgpModel::from_draws(&data, vec![draw.clone(), draw], 0, 1).unwrap();
        let q = DMatrix::from_column_slice(3, 1, &[-1.0, 0.1, 1.4]);
        let a = single.predict(&q, false).unwrap();
        let b = double.predict(&q, false).unwrap();
        for i in 0..3 {
            assert_relative_eq!(a.mean[i], b.mean[i], epsilon = 1e-12);
            assert_relative_eq!(a.variance[i], b.variance[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn short_training_run_produces_expected_draw_count() {
        let data = toy_data(6, 42);
        let cfg = DgpConfig {
            samples: 40,
            burn_in_fraction: 0.5,
            thinning: 5,
            ..DgpConfig::default()
        };
        let mut rng = RngStream::new(43, 0);
        let (model, report) = train_dgp(&data, &cfg, &mut rng).unwrap();
        assert_eq!(model.draws().len(), 4); // (40-20)/5
        assert_eq!(report.compound_log_likelihood_trace.len(), 40);
        assert!(report.compound_log_likelihood_trace.iter().all(|v| v.is_finite()));
        assert!(model.predict(data.inputs(), false).is_ok());
    }

    #[test]
    fn save_load_round_trip_is_bitwise() {
        let data = toy_data(6, 44);
        let cfg = DgpConfig {
            samples: 20,
            burn_in_fraction: 0.5,
            thinning: 2,
            ..DgpConfig::default()
        };
        let mut rng = RngStream::new(45, 0);
        let (model, _) = train_dgp(&data, &cfg, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dgp.pqsm");
        model.save(&path).unwrap();
        let loaded = DgpModel::load(&path).unwrap();
        assert_eq!(loaded.draws().len(), model.draws().len());
        let q = DMatrix::from_column_slice(4, 1, &[-1.5, -0.5, 0.5, 1.5]);
        let a = model.predict(&q, false).unwrap();
        let b = loaded.predict(&q, false).unwrap();
        for i in 0..4 {
            assert_eq!(a.mean[i].to_bits(), b.mean[i].to_bits());
            assert_eq!(a.variance[i].to_bits(), b.variance[i].to_bits());
        }
    }

    #[test]
    fn rejects_empty_draws_and_multi_output_data() {
        let data = toy_data(5, 46);
        assert!(matches!(
            DgpModel::from_draws(&data, vec![], 0, 1),
            Err(Error::EmptyData(_))
        ));
        let multi = Dataset::new(
            data.inputs().clone(),
            DMatrix::from_element(5, 2, 1.0),
        )
        .unwrap();
        let x_std = ColumnTransform::standardizing(data.inputs()).apply(data.inputs());
        let draw = identity_state(&x_std, ArdKernelParams::new(vec![1.0], 1.0, 0.01).unwrap());
        assert!(DgpModel::from_draws(&multi, vec![draw], 0, 1).is_err());
    }
}
