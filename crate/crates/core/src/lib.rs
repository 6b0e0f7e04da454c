//! Confidence-based sample rejection for detection-driven counting.
//!
//! An image is gated by a [`RejectionLevel`]: boxes below the confidence
//! threshold are discarded, and the image is accepted only when the median of
//! the surviving box confidences reaches the median cutoff. The crate selects
//! both values from validation data ([`calibration`]), evaluates them on test
//! data, and benchmarks them against idealized oracle rejectors ([`oracle`]).
//!
//! With the default `parallel` feature, bootstrap resampling and threshold
//! sweeps run on rayon. Every random stream is derived from `(seed, index)`,
//! so outputs are identical whatever the thread count, and identical to a
//! build without the feature.

pub mod calibration;
pub mod cli;
pub mod data;
mod error;
pub mod model;
pub mod oracle;
mod parallel;
pub mod stats;

pub use error::{Error, Result};
pub use model::{
    absolute_error, gate, predicted_count, surviving_scores, survivor_median, EmptyMedian,
    GateDecision, ImageRecord, LevelKind, RejectionLevel, SeasonId, SeasonKind,
};
pub use stats::{BootstrapConfig, IntervalEstimate};
