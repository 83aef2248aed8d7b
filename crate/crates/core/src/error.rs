use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("unknown {component}: {value}")]
    UnknownCategory { component: &'static str, value: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric overflow in {0}")]
    NumericOverflow(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid config field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("split too small: {0} tasks (need at least 10)")]
    SplitTooSmall(usize),

    #[error("components not separable")]
    NotSeparable,

    #[error("degenerate mixture component: {0}")]
    DegenerateComponent(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("profile required for user {0}")]
    ProfileRequired(String),

    #[error("attribute missing: {0}")]
    AttributeMissing(String),

    #[error("non-finite training loss at epoch {epoch}, batch {batch}: {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig { field: field.into(), message: message.into() }
    }
}
