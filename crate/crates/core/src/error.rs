use thiserror::Error;

use crate::dataio::FormatError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("svd failed for a {rows}x{cols} matrix")]
    SvdFailure { rows: usize, cols: usize },

    #[error("matrix is rank deficient: sigma_min/sigma_max = {ratio:e}")]
    Singular { ratio: f64 },

    #[error("solver diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("undefined ROC: {0}")]
    UndefinedRoc(String),

    #[error("infeasible synthetic instance: {0}")]
    Infeasible(String),

    #[error("class {0} has no labeled voxels")]
    MissingClass(u32),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SvdFailure { .. } | Error::Divergence { .. } | Error::Singular { .. }
        )
    }
}
