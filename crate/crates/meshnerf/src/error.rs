//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),

    #[error("query point lies within {tolerance} of the mesh surface")]
    SurfaceAmbiguous { tolerance: f64 },

    #[error("empty silhouette: {0}")]
    EmptySilhouette(String),

    #[error("mask grids differ: {0:?} vs {1:?}")]
    GridMismatch((usize, usize), (usize, usize)),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("corrupt library: {0}")]
    CorruptLibrary(String),

    #[error("no order-consistent assignment: {discarded} views would need to be discarded (max {allowed}); conflicting views: {views:?}")]
    TooManyDiscards {
        discarded: usize,
        allowed: usize,
        views: Vec<usize>,
    },

    #[error("pose alignment is ill-conditioned: {0}")]
    AlignmentIllConditioned(String),

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("backward already ran on this graph")]
    DoubleBackward,

    #[error("training diverged at iteration {iteration}: {message}")]
    Diverged { iteration: usize, message: String },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used by the CLI for machine-parsable exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Diverged { .. } => "divergence",
            _ => "data",
        }
    }
}
