use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the identification / control pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid quantizer range: x_min = {x_min} must be below x_max = {x_max}")]
    InvalidRange { x_min: f64, x_max: f64 },

    #[error("invalid word length {0}: must lie in 1..=32")]
    InvalidWordLength(u32),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("empty sample set")]
    EmptySampleSet,

    #[error("simulation diverged at step {step} (state norm {norm:.3e})")]
    Divergence { step: usize, norm: f64 },

    #[error("integrator unstable at step {step}: {reason}")]
    Unstable { step: usize, reason: String },

    #[error("numerical failure in {context} (condition estimate {condition:.3e})")]
    Numerical { context: &'static str, condition: f64 },

    #[error("rank deficient data: {rank} of {required} directions above tolerance")]
    RankDeficient { rank: usize, required: usize },

    #[error("reference block has zero norm")]
    ZeroDenominator,

    #[error("every index was skipped (true state norm below threshold)")]
    AllIndicesSkipped,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("record (b = {word_length}, seed = {seed}): {source}")]
    Record {
        word_length: u32,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// `true` for failures caused by bad user input rather than numerics.
    pub fn is_config(&self) -> bool {
        match self {
            Error::InvalidRange { .. }
            | Error::InvalidWordLength(_)
            | Error::InvalidArgument(_)
            | Error::Config(_)
            | Error::Format { .. }
            | Error::Io { .. }
            | Error::DimensionMismatch { .. } => true,
            Error::Record { source, .. } => source.is_config(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
