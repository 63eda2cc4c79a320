//! Bayesian model-averaged prediction for piecewise-linear sequences with a
//! single unknown change point.
//!
//! The crate is organised bottom-up:
//!
//! * [`simulators`] draws piecewise-linear regression prompts and
//!   piecewise-stable linear dynamical system trajectories.
//! * [`bayes_linear`] holds the conjugate Gaussian linear-model core:
//!   prefix sums, segment statistics, ridge posteriors and exact
//!   log-marginal likelihoods.
//! * [`changepoint_bma`] maintains a posterior over change-point hypotheses
//!   and averages the per-hypothesis ridge predictions.
//! * [`baselines`] implements the oracle segmented ridge, transfer ridge and
//!   LDS oracle comparators.
//! * [`construction`] executes a four-layer causal transformer whose
//!   attention heads assemble the same sufficient statistics with
//!   finite-sharpness softmax, so its distance to the model-averaged
//!   prediction can be measured.
//! * [`harness`] runs Monte-Carlo sweeps and writes CSV/SVG tables.

pub mod baselines;
pub mod bayes_linear;
pub mod changepoint_bma;
pub mod construction;
mod error;
pub mod harness;
pub mod math;
pub mod simulators;

pub use error::{Error, Result};
