//! Forward and inverse sampling engines: Monte Carlo and Latin hypercube
//! designs, importance sampling with an adaptive Gaussian density, subset
//! simulation (plain and surrogate-accelerated), serial and parallel
//! Metropolis-Hastings, affine-invariant stretch and differential-evolution
//! ensembles, and the Gelman-Rubin convergence diagnostic.
//!
//! Every sampler consumes a [`RngStream`](crate::numerics::RngStream) and is
//! bitwise-reproducible from (seed, config) within one build. Batch target
//! evaluations take whole candidate matrices so callers can fan the rows out
//! to a worker pool; results are keyed by row index, never by completion
//! order.

mod forward;
mod importance;
mod mcmc;
mod subset;

pub use forward::{latin_hypercube, monte_carlo};
pub use importance::{
    adaptive_importance_sampling, importance_estimate, AisConfig, AisResult, ImportanceDensity,
    ImportanceEstimate,
};
pub use mcmc::{
    differential_evolution_step, gelman_rubin, mh_chain, parallel_mh_step, stretch_move_step,
    EnsembleState, MhChainResult,
};
pub use subset::{
    active_learning_subset_simulation, subset_simulation, AlSubsetConfig, AlSubsetResult,
    SubsetConfig, SubsetResult, SubsetState,
};

use serde::{Deserialize, Serialize};

use crate::distributions::{standard_normal_cdf, Dist};
use crate::error::Error;

/// Which side of a response level counts as failure. Internally every
/// engine canonicalizes to exceedance: `margin` is positive on failures.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sense", content = "level", rename_all = "snake_case")]
pub enum FailureCriterion {
    Above(f64),
    Below(f64),
}

impl FailureCriterion {
    /// Signed response in canonical (exceedance) orientation.
    pub fn canonical_response(&self, response: f64) -> f64 {
        match self {
            FailureCriterion::Above(_) => response,
            FailureCriterion::Below(_) => -response,
        }
    }

    /// The failure level in canonical orientation.
    pub fn canonical_level(&self) -> f64 {
        match self {
            FailureCriterion::Above(level) => *level,
            FailureCriterion::Below(level) => -*level,
        }
    }

    pub fn is_failure(&self, response: f64) -> bool {
        self.canonical_response(response) > self.canonical_level()
    }

    pub fn validate(&self) -> Result<(), Error> {
        let level = match self {
            FailureCriterion::Above(l) | FailureCriterion::Below(l) => *l,
        };
        if !level.is_finite() {
            return Err(Error::InvalidConfig("failure level must be finite".into()));
        }
        Ok(())
    }
}

/// Maps one standard-normal point to the original input space through the
/// marginal inverse CDFs.
pub(crate) fn standard_normal_to_input(dists: &[Dist], z: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(dists)
        .map(|(zi, d)| d.inverse_cdf(standard_normal_cdf(*zi)))
        .collect()
}

pub(crate) fn validate_dists(dists: &[Dist]) -> Result<(), Error> {
    if dists.is_empty() {
        return Err(Error::EmptyData("input distributions".into()));
    }
    for d in dists {
        d.validate()?;
    }
    Ok(())
}
