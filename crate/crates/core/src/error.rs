use std::path::PathBuf;

use crate::continuous::RefinementStep;

/// Errors raised by the solvers, the front-ends and the batch driver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("iterative factorization did not converge ({0})")]
    NonConvergence(&'static str),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive semi-definite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },

    #[error("a snapshot series needs at least 2 states, got {0}")]
    TooFewSnapshots(usize),

    #[error("kernel evaluation failed at quadrature node {node}: {reason}")]
    KernelEvalFailure { node: usize, reason: String },

    #[error("quadrature refinement did not converge within {q_max} nodes")]
    NotConverged {
        q_max: usize,
        trace: Vec<RefinementStep>,
    },

    #[error("{path}:{line}:{column}: cannot parse {token:?} as a number")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        token: String,
    },

    #[error("{path}:{line}: expected {expected} columns, found {found}")]
    RaggedRows {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("oracle found a candidate beating the closed form (margin {margin:e})")]
    MarginViolation { margin: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::RaggedRows { .. }
            | Error::Config(_)
            | Error::InvalidArgument(_)
            | Error::NonFinite { .. }
            | Error::Io { .. } => 2,
            Error::DimensionMismatch(_) | Error::TooFewSnapshots(_) => 3,
            Error::NonConvergence(_)
            | Error::NotSymmetric { .. }
            | Error::NotPsd { .. }
            | Error::KernelEvalFailure { .. }
            | Error::NotConverged { .. } => 4,
            Error::MarginViolation { .. } => 5,
        }
    }

    pub(crate) fn mismatch(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
