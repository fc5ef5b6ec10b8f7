//! Multivariate time-series forecasting built around a parallel decomposition:
//! one network predicts the long-term trend (the value one step before the
//! target), a second predicts the short-term fluctuation (the first difference
//! at the target), and their sum is the forecast.
//!
//! The crate is self-contained: a small reverse-mode autodiff tape ([`tensor`]),
//! the network blocks ([`nn`]), Adam ([`optim`]), CSV ingestion and windowing
//! ([`data`]), the forecaster family behind a name registry ([`forecaster`]),
//! a least-squares vector-autoregression baseline ([`var`]), evaluation
//! metrics ([`metrics`]), and the experiment harness ([`harness`]).

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod forecaster;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod var;
