use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("{line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("tokens {first} and {second} have overlapping bounding boxes")]
    Overlap { first: usize, second: usize },

    #[error("class `{0}` is not part of the taxonomy")]
    UnknownClass(String),

    #[error("n-gram `{0}` is not present in the index")]
    UnknownGram(String),

    #[error("n-gram `{0}` has no recorded frequency")]
    MissingFrequency(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("stage {stage} failed{}: {source}", .example_id.map(|id| format!(" on example {id}")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        example_id: Option<u64>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(what: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.to_string(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }

    pub fn in_stage(self, stage: &'static str, example_id: Option<u64>) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                example_id,
                source: Box::new(other),
            },
        }
    }

    /// True for failures that are not caused by the input data.
    pub fn is_internal(&self) -> bool {
        match self {
            Error::Internal(_) => true,
            Error::Stage { source, .. } => source.is_internal(),
            _ => false,
        }
    }
}
