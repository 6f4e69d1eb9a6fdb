//! Dense linear-algebra plumbing and seeded random streams.
//!
//! Everything downstream funnels matrix factorizations through
//! [`cholesky_with_jitter`] so that conditioning problems surface in one
//! place, with one retry policy. Inverses are never formed for solves;
//! use the factor's solve methods.

mod cholesky;
mod rng;
mod svd;

pub use cholesky::{cholesky_with_jitter, CholeskyFactor};
pub use rng::RngStream;
pub use svd::{thin_svd, ThinSvd};
