//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A symbol index fell outside the model's emission alphabet.
    #[error("symbol index {symbol} at position {position} is out of range for alphabet of size {alphabet_size}")]
    Encoding {
        position: usize,
        symbol: usize,
        alphabet_size: usize,
    },

    /// A state label is unknown to the alphabet a trail is encoded against.
    #[error("unknown state `{label}` for marker `{marker}` at position {position}")]
    UnknownLabel {
        marker: String,
        label: String,
        position: usize,
    },

    /// Every candidate state had zero probability at `step` (0-based).
    #[error("decoding failed at step {step}: observation has zero probability under the model")]
    DecodeFailure { step: usize },

    #[error("{paths:.3e} candidate state sequences exceed the enumeration limit of {limit:.3e}")]
    Capacity { paths: f64, limit: f64 },

    #[error("training degeneracy: {0}")]
    TrainingDegeneracy(String),

    #[error("config section `{section}`: {message}")]
    Schema { section: String, message: String },

    #[error("ingest: {0}")]
    Ingest(String),

    #[error("estimation: {0}")]
    Estimation(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("unknown marker `{0}`")]
    UnknownMarker(String),
}

impl Error {
    /// True for errors caused by invalid user input (config, data, query,
    /// arguments) rather than by a failure during computation. The CLI maps
    /// validation errors to exit code 1 and the rest to exit code 2.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::DecodeFailure { .. } | Error::Capacity { .. } | Error::TrainingDegeneracy(_)
        )
    }
}
