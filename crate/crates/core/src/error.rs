use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report. Variants are grouped by the
/// category printed on the command line (see [`Error::category`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("window plan error: {0}")]
    Plan(String),

    #[error("loss error: {0}")]
    Loss(String),
    #[error("optimizer error: non-finite gradient for parameter {0}")]
    Optimizer(String),
    #[error("training error at step {step}: {message}")]
    Training { step: usize, message: String },
    #[error("lr finder error: {0}")]
    Finder(String),

    #[error("bookkeeping error: {0}")]
    Bookkeeping(String),

    #[error("format error: {0}")]
    Format(String),
    #[error("corrupted checkpoint at byte {offset}: {message}")]
    Corruption { offset: usize, message: String },
    #[error("compatibility error: {0}")]
    Compatibility(String),
    #[error("report error: {0}")]
    Report(String),
    #[error("benchmark error: {0}")]
    Bench(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// Short category tag used for the CLI error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension { .. }
            | Error::Parameter(_)
            | Error::State(_)
            | Error::Input(_)
            | Error::Usage(_)
            | Error::NonFinite(_) => "input",
            Error::Schema(_) => "config",
            Error::Parse { .. } | Error::Data(_) | Error::Plan(_) => "data",
            Error::Loss(_) | Error::Optimizer(_) | Error::Training { .. } | Error::Finder(_) => {
                "training"
            }
            Error::Bookkeeping(_) => "hpo",
            Error::Format(_) | Error::Corruption { .. } | Error::Compatibility(_) => "checkpoint",
            Error::Report(_) => "report",
            Error::Bench(_) => "bench",
            Error::Io { .. } | Error::Json(_) => "io",
        }
    }
}
