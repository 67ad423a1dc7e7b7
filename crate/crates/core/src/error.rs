//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the model library.
#[derive(Debug, Error)]
pub enum Error {
    /// A filter or parameter specification violates its preconditions.
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    /// Inputs to an operation are inconsistent (rates, lengths, ranges).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A model parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// MVC calibration could not find the required effort peaks.
    #[error("calibration failure on channel {channel}: {reason}")]
    CalibrationFailure { channel: String, reason: String },

    /// Joint angle or fiber geometry left the physically meaningful region.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Every optimization start ended in the penalty region.
    #[error("fit failure: {0}")]
    FitFailure(String),

    /// Repetition segmentation found fewer than two boundaries.
    #[error("segmentation failure: {0}")]
    SegmentationFailure(String),

    /// A metric is undefined for the given series (constant input, length).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A synthetic trial profile violates its invariants.
    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    /// A trial file failed to load or validate.
    #[error("invalid trial {path}: {reason}")]
    InvalidTrial { path: String, reason: String },

    /// A configuration document failed to parse or validate.
    #[error("invalid config {path}: {reason}")]
    InvalidConfig { path: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// An I/O failure tagged with the path it happened on.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
