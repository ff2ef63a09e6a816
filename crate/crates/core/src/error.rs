use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unparseable container {}: {reason}", path.display())]
    Unparseable { path: PathBuf, reason: String },

    #[error("no analyzable matrices in {}", .0.display())]
    NoAnalyzableMatrices(PathBuf),

    #[error("tensor {name}: dimension {dim} is not divisible into {blocks} blocks")]
    IndivisibleSplit {
        name: String,
        dim: usize,
        blocks: usize,
    },

    #[error("SVD did not converge for matrix {0}")]
    SvdNonConvergence(String),

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("optimizer did not converge: {0}")]
    NonConvergence(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("name mismatch: {0}")]
    NameMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable kind used in structured error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::FileNotFound(_) => "file_not_found",
            Error::Io { .. } => "io",
            Error::Unparseable { .. } => "unparseable",
            Error::NoAnalyzableMatrices(_) => "no_analyzable_matrices",
            Error::IndivisibleSplit { .. } => "indivisible_split",
            Error::SvdNonConvergence(_) => "svd_non_convergence",
            Error::DegenerateSpectrum(_) => "degenerate_spectrum",
            Error::NonConvergence(_) => "non_convergence",
            Error::Quadrature(_) => "quadrature",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::NameMismatch(_) => "name_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Manifest(_) => "manifest",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
