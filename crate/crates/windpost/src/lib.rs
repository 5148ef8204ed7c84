//! Statistical post-processing of deterministic gridded wind-speed forecasts
//! into calibrated predictive probability distributions.
//!
//! The toolkit covers the full pipeline: dataset handling and synthetic data
//! generation, predictor extraction, linear-regression residualization,
//! quantile regression forests, a small reverse-mode tensor engine with three
//! conditional-density output heads, proper scoring rules (CRPS, log score,
//! Brier), and a verification suite with block-bootstrap uncertainty.

pub mod data;
pub mod dist;
pub mod error;
pub mod experiment;
pub mod heads;
pub mod linreg;
pub mod nn;
pub mod qrf;
pub mod scoring;

pub use error::{Error, Result};
