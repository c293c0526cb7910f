//! Parisian ruin in the two-dimensional Brownian risk model.
//!
//! * [`model`]: parameters, regime classification, optimizers, local exponents.
//! * [`analytics`]: closed forms and assembly of the limiting conditional probability.
//! * [`pathsim`]: correlated path simulation and the conditional-ratio estimator.
//! * [`constants`]: Monte Carlo estimates of the Pickands-type constants.
//! * [`harness`]: configs, experiments and reports behind the `parisian` binary.

pub mod analytics;
pub mod constants;
pub mod error;
pub mod harness;
pub mod model;
pub mod pathsim;
pub mod rng;

pub use error::{Error, Result};
pub use model::{ModelParams, Regime, RegimeTag};
