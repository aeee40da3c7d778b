//! Multivariate time-series forecasting with all-MLP mixer models.
//!
//! The crate is organised bottom-up: [`tensor`] and [`autodiff`] provide
//! dense float64 arrays and reverse-mode gradients, [`layers`] builds the
//! mixing blocks on top, [`models`] assembles forecasting families,
//! [`training`] fits them, and [`data`] / [`metrics`] handle ingestion and
//! scoring. The `tsmixer` binary wraps everything in [`cli`].

// `!(x > 0.0)` checks reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
