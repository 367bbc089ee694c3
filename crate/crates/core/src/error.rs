use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },

    #[error("duplicate surface `{0}`")]
    DuplicateSurface(String),

    #[error("unknown {kind} token `{token}`")]
    UnknownToken { kind: &'static str, token: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("`{0}` is not a template pattern class")]
    NotTemplateClass(String),

    #[error("verb `{0}` already begins with 被")]
    AlreadyBeiPrefixed(String),

    #[error("example set for `{surface}` is invalid: {problems}")]
    InvalidExampleSet { surface: String, problems: String },

    #[error("no prompt pack for indicator `{0}`")]
    MissingPromptPack(String),

    #[error(transparent)]
    Gateway(#[from] crate::gateway::GatewayError),

    #[error("scorer protocol violation: {0}")]
    Protocol(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("every indicator failed during harvest ({0} attempted)")]
    AllIndicatorsFailed(usize),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(file: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Malformed {
            file: file.into(),
            line,
            message: message.into(),
        }
    }
}

pub(crate) fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
