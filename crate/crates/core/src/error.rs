use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at index {index} in {what}")]
    NonFinite { what: &'static str, index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("fold rate {kappa} does not divide {locations} locations")]
    FoldRate { kappa: usize, locations: usize },

    #[error("all feature descriptors are identical; similarity bandwidth is undefined")]
    DegenerateBandwidth,

    #[error("inexact transposes are not present in the filter bank")]
    MissingInexactTranspose,

    #[error("exact graph mode requires the exact-gradient Laplacian")]
    MissingExactWeights,

    #[error("line search failed after {backtracks} backtracks at iteration {iteration}")]
    LineSearchFailure { iteration: usize, backtracks: usize },

    #[error("iterate became non-finite at iteration {0}")]
    NonFiniteIterate(usize),

    #[error("sidecar {path}: {reason}")]
    Sidecar { path: PathBuf, reason: String },

    #[error("filter bank: {0}")]
    FilterBank(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}
