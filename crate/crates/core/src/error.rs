use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("row index {index} out of range for table with {n_rows} rows")]
    Index { index: usize, n_rows: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("metric mismatch: rule expects `{expected}`, got `{actual}`")]
    MetricMismatch { expected: String, actual: String },

    #[error("rule syntax error in `{expr}`: {reason}")]
    RuleSyntax { expr: String, reason: String },

    #[error("insufficient minority rows: class `{class}` has {count} rows, need at least 2")]
    InsufficientMinority { class: String, count: usize },

    #[error("module pipeline is empty")]
    EmptyPipeline,

    #[error("module `{0}` is already registered")]
    DuplicateName(String),

    #[error("unknown module `{0}`")]
    UnknownModule(String),

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("too few rows: {0}")]
    TooFewRows(String),

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("timed out: {0}")]
    Timeout(String),

    #[error("failed to bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to connect to {addr}: {source}")]
    Connect {
        addr: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
