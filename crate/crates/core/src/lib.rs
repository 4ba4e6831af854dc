//! A laboratory for multi-model probabilistic forecasting.
//!
//! The truth is the one-dimensional Moran-Ricker map observed with Gaussian
//! noise. Four structurally imperfect models produce initial-condition
//! ensembles; each ensemble becomes a predictive density by Gaussian kernel
//! dressing blended with climatology, and the models are combined with
//! weights fitted by minimising the Ignorance score. The experiment harness
//! contrasts forecast systems whose parameters are fitted on large and on
//! small forecast-outcome archives.

pub mod calibration;
pub mod chaos;
pub mod density;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod models;
pub mod output;
pub mod quadrature;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
