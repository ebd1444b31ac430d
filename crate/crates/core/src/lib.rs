//! Volatility regime analysis for return series.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`changepoint`] splits a log-return series into locally stationary
//!    segments with a streaming, rank-based Mood test.
//! 2. [`wasserstein`] measures the 1-D Wasserstein distance between the
//!    empirical distributions of those segments.
//! 3. [`spectral`] clusters the distance matrix with self-tuning spectral
//!    clustering, choosing the number of clusters from the spectrum.
//! 4. [`regimes`] ties the stages together and ranks clusters by variance.
//!
//! [`synthetic`] generates piecewise-stationary test series with known
//! ground truth, and [`strategy`] runs a walk-forward two-asset strategy on
//! top of fitted regime models.

// `!(x > 0.0)` style checks are how NaN gets rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod changepoint;
mod error;
pub mod market_data;
pub mod regimes;
pub mod rng;
pub mod spectral;
pub mod strategy;
pub mod synthetic;
pub mod wasserstein;

pub use error::{Error, Result};
