use std::path::PathBuf;

use thiserror::Error;

use crate::dual::SolveStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-binary treatment: row {row}, column `{column}`, value `{value}`")]
    NonBinaryTreatment {
        row: usize,
        column: String,
        value: String,
    },

    #[error("missing value: row {row}, column `{column}`")]
    MissingValue { row: usize, column: String },

    #[error("unparseable number `{value}` at row {row}, column `{column}`")]
    BadNumber {
        row: usize,
        column: String,
        value: String,
    },

    #[error("treatment group {0} is empty")]
    EmptyGroup(u8),

    #[error("invalid basis: {0}")]
    Basis(String),

    #[error("zero-variance column `{0}` cannot be standardized")]
    ZeroVariance(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("step {step} solver did not converge ({status:?}): max violation {max_violation:.3e}, gap {gap:.3e}")]
    Solver {
        step: u8,
        status: SolveStatus,
        max_violation: f64,
        gap: f64,
    },

    #[error("weights out of range: {0}")]
    Range(String),

    #[error("GMM did not converge: final objective {objective:.3e}")]
    Gmm { objective: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain violation: {0}")]
    Domain(String),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Solver { .. } | Error::Range(_) | Error::Gmm { .. } | Error::Domain(_)
        )
    }
}
