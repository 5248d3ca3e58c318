//! Periodic-folding convolutional forecaster for short-term traffic
//! congestion, with the baselines and evaluation used to compare it.

// Validation is written as `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod domain;
pub mod error;
pub mod eval;
pub mod folding;
pub mod ingest;
pub mod nn;
pub mod pcnn;
pub mod synth;

pub use domain::{CongestionSeries, NormalizationParams, SlotIndex, Splits};
pub use error::{Error, Result};
pub use eval::{ForecastRow, Metrics};
pub use folding::{FoldingConfig, InputMatrix, Origin};
pub use pcnn::{PcnnConfig, PcnnModel, TrainReport};
