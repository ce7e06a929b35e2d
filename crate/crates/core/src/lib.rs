//! Unsupervised anomaly detection for in-sewer flow monitoring data.
//!
//! The crate covers the whole offline workflow: raw CSV ingestion and daily
//! segmentation ([`data`]), a small reverse-mode numerical engine
//! ([`engine`]), the 1D-convolutional autoencoder ([`model`]), training with
//! early stopping ([`train`]), reconstruction-error detection and scoring
//! against span labels ([`detect`]), and a synthetic flow generator with
//! injected anomalies ([`synth`]).

pub mod data;
pub mod detect;
pub mod engine;
mod error;
pub mod gradcheck;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

/// Number of flow sensors in a record.
pub const CHANNELS: usize = 3;
/// Samples per day on the 5-minute grid.
pub const SAMPLES_PER_DAY: usize = 288;
/// Grid resolution in minutes.
pub const GRID_MINUTES: i64 = 5;
