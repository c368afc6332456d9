use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
///
/// The CLI maps [`Error::Internal`] to exit code 2 and everything else to 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid tag sequence: {0}")]
    Tags(String),

    #[error("alignment mismatch: {0}")]
    Alignment(String),

    #[error("sentence of {n_sentence} tokens needs max_len >= {needed}, got {max_len}")]
    SentenceTooLong {
        n_sentence: usize,
        needed: usize,
        max_len: usize,
    },

    #[error("attention mask row {row} has no set bit")]
    DegenerateMask { row: usize },

    #[error("training diverged at epoch {epoch}: loss is {loss}; try a smaller learning rate (current {learning_rate})")]
    Diverged {
        epoch: usize,
        loss: f64,
        learning_rate: f64,
    },

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
