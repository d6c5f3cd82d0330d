use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the audit pipeline.
///
/// The variants group into the CLI exit-code classes: validation problems,
/// I/O problems, and numerical (convergence or degeneracy) problems.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: malformed JSON: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: schema violation: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("duplicate score key {0}")]
    DuplicateKey(String),

    #[error("record references unknown {kind} `{id}`")]
    UnknownReference { kind: &'static str, id: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("cell ({generator}, {evaluator}) coverage {coverage:.4} is below the floor {floor:.4}")]
    CoverageBelowFloor {
        generator: String,
        evaluator: String,
        coverage: f64,
        floor: f64,
    },

    #[error("cell ({generator}, {evaluator}) has no scores")]
    EmptyCell { generator: String, evaluator: String },

    #[error("matrix too small: need at least 2x2, got {rows}x{cols}")]
    TooSmall { rows: usize, cols: usize },

    #[error("axis mismatch: {0}")]
    AxisMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("no convergence after {iterations} sweeps (last coefficient change {last_delta:e})")]
    NoConvergence { iterations: usize, last_delta: f64 },

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("prompt error: {0}")]
    Prompt(String),

    #[error("score parse error: {0}")]
    Parse(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("journal write failed: {0}")]
    Journal(#[source] std::io::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    /// Process exit code for this error: 1 validation, 2 I/O, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Journal(_) | Error::Transport(_) => 2,
            Error::NoConvergence { .. } | Error::Degenerate(_) | Error::NonFinite(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
