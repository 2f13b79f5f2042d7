//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (negative sizes, bad ranges, unknown keys).
    #[error("configuration error: {0}")]
    Config(String),

    /// Mismatched dimensions between tensors, conformations or models.
    #[error("shape error: {0}")]
    Shape(String),

    /// Out-of-range index (noise level, molecule id, ...).
    #[error("index error: {0}")]
    Index(String),

    /// Numerically invalid input (non-finite coordinates, empty sets).
    #[error("domain error: {0}")]
    Domain(String),

    /// Optimization failure; carries the offending step.
    #[error("training error at step {step}: {msg}")]
    Training { step: usize, msg: String },

    /// Langevin or reverse chain failure; carries level and step inside it.
    #[error("sampling error at level {level}, step {step}: {msg}")]
    Sampling {
        level: usize,
        step: usize,
        msg: String,
    },

    /// Command-line misuse: unknown flags, keys, or unparsable values.
    #[error("usage error: {0}")]
    Usage(String),

    /// Checkpoint / dataset / report file problems.
    #[error("persistence error: {0}")]
    Persistence(String),

    /// Too few samples to produce the requested statistic.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Geometry that leaves a quantity undefined (collinear dihedral frame).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
