//! Probabilistic machine-learning toolkit for uncertainty quantification.
//!
//! The crate bundles the pieces needed to wrap an expensive computational
//! model with a statistical one and then interrogate it:
//!
//! - [`gp`], [`mogp`], [`dgp`]: Gaussian-process surrogates (single-output,
//!   multi-output via coregionalization, and one-hidden-layer deep GPs trained
//!   by MCMC).
//! - [`trainers`]: Adam/AdamW in log-hyperparameter space and a
//!   Metropolis-Hastings trainer.
//! - [`acquisition`]: active-learning scoring functions and penalized batch
//!   selection.
//! - [`bayes`]: residual likelihoods, log-posteriors, and posterior
//!   prediction for model calibration.
//! - [`samplers`]: forward designs (Monte Carlo, Latin hypercube), importance
//!   sampling, subset simulation for rare events, and MCMC kernels
//!   (Metropolis-Hastings, affine-invariant stretch, differential evolution).
//! - [`pca`]: linear dimension reduction for field outputs.
//! - [`harness`]: parallel evaluation of built-in test models and external
//!   commands, with JSON-lines reporting.
//! - [`learner`]: outer loops gluing the above into Bayesian optimization,
//!   likelihood-targeted active learning, and surrogate-based MCMC.
//!
//! Everything that draws randomness takes an explicit [`RngStream`]
//! (ChaCha12 with a stream selector), so runs are reproducible given a seed
//! and results do not depend on worker-thread scheduling.

pub mod acquisition;
pub mod bayes;
pub mod data;
pub mod dgp;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod gp;
pub mod harness;
pub mod kernels;
pub mod learner;
pub mod mogp;
pub mod numerics;
pub mod pca;
pub mod samplers;
pub mod surrogate;
pub mod trainers;

pub use data::{ColumnTransform, Dataset, PosteriorPrediction};
pub use distributions::Dist;
pub use error::Error;
pub use numerics::RngStream;
pub use surrogate::Surrogate;

pub type Result<T> = std::result::Result<T, Error>;
