//! Metastatistical extreme value analysis of gridded hail sizes.
//!
//! The crate covers the whole chain from radar and report data to return
//! level maps: calibration of radar hail sizes, fitting of ordinary-event
//! distributions, a distributional neural network for per-day Weibull
//! parameters, the temporal metastatistical CDF and its return levels,
//! data-quality ratings and a synthetic-climate generator for validation.

pub mod calibration;
pub mod config;
pub mod dataset;
pub mod date;
pub mod dnn;
pub mod error;
pub mod grid;
pub mod ordinary;
pub mod pipeline;
pub mod quality;
pub mod relevance;
pub mod roots;
pub mod scaling;
pub mod seeds;
pub mod synth;
pub mod tmevd;
pub mod weibull;

pub use dataset::{Dataset, HailEventRecord};
pub use date::DayDate;
pub use error::{Error, Result};
pub use grid::GridSpec;
pub use weibull::WeibullParams;
