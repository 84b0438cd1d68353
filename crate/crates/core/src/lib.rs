//! Longitudinal covariate-assisted principal regression.
//!
//! Each subject `i` contributes `V_i` visits; visit `v` holds `T_iv`
//! observations of a `p`-dimensional signal and a covariate vector `x_iv`.
//! The model looks for a projection `gamma` such that
//!
//! ```text
//! log(gamma' Sigma_iv gamma) = beta0 + x_iv' beta1 + u_i,   u_i ~ N(0, sigma2)
//! ```
//!
//! and fits it by block coordinate descent on an approximate hierarchical
//! likelihood, with a pooled linear shrinkage estimator for the covariances.
//!
//! The modules follow the pipeline:
//!
//! - [`data`]: loading, centering and validating longitudinal datasets
//! - [`panel`]: per-block sufficient statistics consumed by the estimators
//! - [`covariance`]: sample covariances, shrinkage and the matrix `H`
//! - [`likelihood`]: the objective and its derivatives
//! - [`estimation`]: the coordinate descent, multi-start and components
//! - [`inference`]: subject-level bootstrap intervals
//! - [`simulation`]: data generator, metrics, the CAP-mix baseline and
//!   experiment grids
//! - [`cli`]: the command implementations behind the `lcap` binary

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod covariance;
pub mod data;
pub mod error;
pub mod estimation;
pub mod inference;
pub mod likelihood;
pub mod linalg;
pub mod panel;
pub mod simulation;

pub use error::{LcapError, Result};
