//! Bayesian additive regression trees with measurement error in the
//! predictors.
//!
//! The model treats each observation's true predictor vector as a latent
//! parameter: trees are fit against the latent values, and a
//! Metropolis-within-Gibbs step re-draws those values from the product of
//! the response likelihood, the known measurement model around the observed
//! predictors, and a diagonal normal prior. Running the same sweep with the
//! latent step disabled gives the plain sum-of-trees baseline, and a
//! probit-augmented variant covers binary responses.
//!
//! Crate layout:
//! - [`ensemble`]: trees, cutpoint grids, grow/prune proposals, and the
//!   integrated leaf likelihood behind the structure Metropolis step.
//! - [`priors`]: prior constants, response rescaling, conjugate leaf and
//!   variance draws, variance-prior calibration.
//! - [`latent`]: the latent-predictor random-walk update.
//! - [`sampler`]: the full Gibbs sweep, chains, probit mode, diagnostics.
//! - [`synthetic`]: benchmark data generators with retained ground truth.
//! - [`metrics`]: MSE / ISE / coverage / CRPS / latent-RMSE scoring.
//! - [`data`], [`draws`], [`config`], [`bench`](mod@bench): CSV ingestion,
//!   the posterior-draw container, experiment configuration, and the
//!   benchmark grid runner.

// validation comparisons are written in the `!(x > 0.0)` form on purpose:
// they must reject NaN, which plain `x <= 0.0` would let through
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod data;
pub mod draws;
pub mod ensemble;
mod error;
pub mod latent;
pub mod metrics;
pub mod priors;
pub mod sampler;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
