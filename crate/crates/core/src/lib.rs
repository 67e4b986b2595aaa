//! Thompson-sampling contextual bandit for just-in-time adaptive
//! interventions: data-adaptive hierarchical Bayesian logistic regression,
//! policy tables with missing-context imputation, a synthetic trial
//! simulator and regret / calibration evaluation.

pub mod domain;
pub mod error;
pub mod eval;
pub mod learner;
pub mod log;
pub mod parallel;
pub mod policy;
pub mod seeds;
pub mod sim;
pub mod spec;

pub use error::{Error, Result};

/// Crate version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
