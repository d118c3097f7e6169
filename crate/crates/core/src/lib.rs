//! Ensemble and variational data assimilation on chaotic toy models, with a
//! reproducible Lorenz-96 benchmark harness.
//!
//! Layers, bottom up:
//! - [`la`]: vectors, ensembles, covariance operators
//! - [`models`]: Lorenz-63/96, RK4 integration, discrete TLM/adjoint,
//!   selection observation operators
//! - [`error_models`]: Gaussian error models
//! - [`ensemble_ops`]: inflation and Gaspari-Cohn localization
//! - [`filters`]: KF, EnKF, DEnKF, ETKF, particle filter, HMC filter
//! - [`variational`]: 3D-Var / 4D-Var cost and adjoint gradients, L-BFGS
//! - [`process`]: twin-experiment cycle driver
//! - [`metrics`]: RMSE, rank histograms, Beta fits, KL-to-uniform
//! - [`config`] / [`harness`]: experiment configs, sweeps, CSV emission

pub mod config;
pub mod ensemble_ops;
pub mod error;
pub mod error_models;
pub mod filters;
pub mod harness;
pub mod la;
pub mod metrics;
pub mod models;
pub mod process;
pub mod rng;
pub mod variational;

pub use error::{Error, Result};
