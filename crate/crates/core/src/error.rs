use std::path::PathBuf;

use thiserror::Error;

use crate::lasso::FitResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph contains a directed cycle")]
    CyclicGraph,

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("validation error ({invariant}): {detail}")]
    Validation { invariant: String, detail: String },

    #[error("joint table has {configs} configurations, cap is {cap}")]
    TooLarge { configs: u128, cap: u64 },

    #[error("level index {level} out of range for {levels} levels")]
    OutOfRange { level: usize, levels: usize },

    #[error("node {0} is not part of the block map")]
    UnknownNode(usize),

    #[error("unsupported block norm pair ({0}, {1})")]
    UnsupportedPair(String, String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("solver did not converge after {iterations} iterations (kkt residual {kkt_residual:.3e})")]
    NotConverged {
        iterations: usize,
        kkt_residual: f64,
        last: Box<FitResult>,
    },

    #[error("alpha = {0} is outside (0, 1]")]
    AlphaOutOfRange(f64),

    #[error("networks have different node sets ({0} vs {1} nodes)")]
    NodeMismatch(usize, usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn validation(invariant: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Validation {
            invariant: invariant.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed or inconsistent user input.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation { .. }
                | Error::InvalidRange(_)
                | Error::CyclicGraph
                | Error::OutOfRange { .. }
                | Error::NodeMismatch(..)
                | Error::UnknownNode(_)
        )
    }
}
