use thiserror::Error;

use crate::rules::Diagnostic;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("no active rules: aggregated output set is empty")]
    NoActiveRules,

    #[error("no correlated high-cognition frames")]
    NoCorrelatedFrames,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("rule source rejected with {} diagnostic(s)", .0.len())]
    Parse(Vec<Diagnostic>),

    #[error("frame {index}: {source}")]
    AtFrame {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_frame(self, index: usize) -> Self {
        Error::AtFrame {
            index,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
