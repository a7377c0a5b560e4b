use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("length error: expected {expected} bytes of payload, found {found}")]
    Length { expected: usize, found: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("row {row} has norm {norm:e}, too small to normalize")]
    DegenerateRow { row: usize, norm: f64 },

    #[error("direction has norm {0:e}, too small to project out")]
    DegenerateDirection(f64),

    #[error("class {class} has {available} samples, {required} required")]
    InsufficientSamples {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("matrix is singular: smallest eigenvalue {0:e}")]
    Singular(f64),

    #[error("eigendecomposition did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("gradient descent diverged at iteration {iteration} (loss {loss})")]
    Divergence { iteration: usize, loss: f64 },

    #[error("self-training round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("member {member} failed during {stage}: {source}")]
    Stage {
        member: String,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Parameter(_) => ErrorKind::Config,
            Error::Singular(_) | Error::NoConvergence(_) | Error::Divergence { .. } => ErrorKind::Numeric,
            Error::Round { source, .. } | Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}
