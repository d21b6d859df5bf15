use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A state entered the model with a NaN or infinite component.
    #[error("non-finite model state at grid k={grid}")]
    NonFiniteState { grid: usize },

    /// The integration left the attractor (|X_k| above the blow-up bound or non-finite).
    #[error("integration blew up at step {step} (grid k={grid}, value {value})")]
    BlowUp { step: usize, grid: usize, value: f64 },

    /// Same as [`Error::BlowUp`], raised while advancing a specific ensemble member.
    #[error("ensemble member {member} blew up at step {step} (grid k={grid}, value {value})")]
    MemberBlowUp {
        member: usize,
        step: usize,
        grid: usize,
        value: f64,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("innovation covariance is not positive definite (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("grid index {index} outside 1..={k}")]
    GridIndex { index: usize, k: usize },

    #[error("invalid configuration: {0}")]
    Invalid(String),

    #[error("filter diverged: analysis RMSE above {threshold} for {cycles} consecutive cycles (last at step {step}, RMSE {rmse})")]
    FilterDivergence {
        step: usize,
        cycles: usize,
        threshold: f64,
        rmse: f64,
    },

    /// `line` is 1-based; 0 means the error is not tied to a line of the file.
    #[error("config{}: {message}", at_line(*line))]
    Config { line: usize, message: String },

    #[error("per-cycle logging was not enabled for this run")]
    LoggingDisabled,

    #[error("percentile of an empty distribution")]
    EmptyDistribution,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("result store {path}: {message}")]
    Store { path: PathBuf, message: String },
}

impl Error {
    /// Runtime failures of the simulation itself, as opposed to bad input.
    pub fn is_runtime(&self) -> bool {
        matches!(
            self,
            Error::BlowUp { .. }
                | Error::MemberBlowUp { .. }
                | Error::NonFiniteState { .. }
                | Error::Singular { .. }
                | Error::FilterDivergence { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn at_line(line: usize) -> String {
    if line == 0 {
        String::new()
    } else {
        format!(" line {line}")
    }
}
