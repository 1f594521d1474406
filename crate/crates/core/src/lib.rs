//! Online take/release (OTR) detection from pre-extracted frame features.
//!
//! The pipeline: a stack of selective state-space blocks classifies every
//! frame as `take`, `release` or `background`; training uses focal loss plus
//! an optional window regularizer on short clips; inference runs either over
//! sliding windows or in streaming mode with a constant-size recurrent state;
//! evaluation is point-level mAP with greedy matching over temporal
//! thresholds of 1..10 seconds.

pub mod cli;
pub mod data;
pub mod detection;
pub mod error;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod numkernel;
pub mod ssm;
pub mod train;

pub use error::{Error, Result};

/// Class index of `take`.
pub const CLASS_TAKE: usize = 0;
/// Class index of `release`.
pub const CLASS_RELEASE: usize = 1;
/// Class index of the background (no action ends here).
pub const CLASS_BACKGROUND: usize = 2;
/// Number of output classes.
pub const NUM_CLASSES: usize = 3;

/// Names of the two foreground classes, indexed by class id.
pub const FOREGROUND_NAMES: [&str; 2] = ["take", "release"];

/// Parse a foreground class name as used in annotation/detection CSVs.
pub fn class_from_name(name: &str) -> Option<usize> {
    match name {
        "take" => Some(CLASS_TAKE),
        "release" => Some(CLASS_RELEASE),
        _ => None,
    }
}
