//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input data (corpus line, lexicon line, text file).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A tag symbol that is not part of the active tagset.
    #[error("unknown tag `{tag}`{}", .line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    UnknownTag { tag: String, line: Option<usize> },

    /// Invalid configuration or parameter value.
    #[error("config error: {0}")]
    Config(String),

    /// An indeterminacy table file that fails schema or invariant checks.
    #[error("table load error: {0}")]
    TableLoad(String),

    /// A language model file that fails schema or invariant checks.
    #[error("model load error: {0}")]
    ModelLoad(String),

    /// A referenced input file does not exist or cannot be opened.
    #[error("missing input `{0}`")]
    MissingInput(PathBuf),

    /// Detection was asked to score a text with no scorable positions.
    #[error("nothing to score: text has no positions at or beyond the context size")]
    NothingToScore,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for CLI use: 2 for usage/config/data problems the
    /// caller can fix, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::UnknownTag { .. }
            | Error::Config(_)
            | Error::TableLoad(_)
            | Error::ModelLoad(_)
            | Error::MissingInput(_)
            | Error::NothingToScore => 2,
            Error::Io(_) | Error::Json(_) => 1,
        }
    }
}
