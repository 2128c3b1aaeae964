//! Transfer learning for scalar-on-function linear regression when the
//! response/covariate relationship drifts between a target population and
//! auxiliary source populations.
//!
//! The crate provides
//! - [`funcore`]: grid quadrature, covariance estimation and FPCA;
//! - [`regress`]: the two-step transfer estimator, its lasso solver and the
//!   target-only FPCA baseline;
//! - [`adaptive`]: candidate source sets and sparse / Q-aggregation;
//! - [`modelsel`]: k-fold cross-validation over truncation and penalty;
//! - [`synth`]: synthetic generators and the integrated squared error metric.

pub mod adaptive;
pub mod error;
pub mod funcore;
pub mod modelsel;
pub mod regress;
pub mod seeding;
pub mod synth;

pub use error::{Error, Result};
