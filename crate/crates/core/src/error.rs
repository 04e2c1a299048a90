use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid run configuration or a lookup against the wrong artifacts
    /// (e.g. a candidate missing from the similarity matrix).
    #[error("config error: {0}")]
    Config(String),

    /// Creative catalog violates an integrity rule (duplicate ids,
    /// mismatched embedding dimensions, bad active window).
    #[error("catalog integrity error: {0}")]
    Catalog(String),

    /// Selection could not produce a decision.
    #[error("decision error: {0}")]
    Decision(String),

    /// Replay estimator consumed zero records.
    #[error("replay estimate undefined: {0}")]
    UndefinedEstimate(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
