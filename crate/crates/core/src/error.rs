use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("cdf evaluated at negative x = {0}")]
    NegativeX(f64),
    #[error("unknown title id {0}")]
    UnknownTitle(usize),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid ranking: {0}")]
    InvalidRanking(String),
    #[error("degenerate variance: both samples are constant")]
    DegenerateVariance,
    #[error("sample is empty")]
    EmptySample,
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("coefficient matrix is rank deficient")]
    RankDeficient,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("cannot load config {path}: {msg}")]
    Config { path: PathBuf, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Validation problems (bad input, bad config) as opposed to failures
    /// that happen while computing.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParams(_)
                | Error::NegativeX(_)
                | Error::UnknownTitle(_)
                | Error::EmptyDataset
                | Error::InvalidConfig(_)
                | Error::InvalidRanking(_)
                | Error::EmptySample
                | Error::ZeroVariance
                | Error::Parse { .. }
                | Error::Config { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
