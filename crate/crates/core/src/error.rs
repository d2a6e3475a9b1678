use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("mesh is not watertight: {count} boundary edges (first: {edges:?})")]
    NotWatertight {
        count: usize,
        edges: Vec<(usize, usize)>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("sample `{0}` has an empty zero level set")]
    EmptyLevelSet(String),

    #[error("surface projection failed: {0}")]
    Projection(String),

    #[error("shape is not star-shaped about its centroid: {0}")]
    NotStarShaped(String),

    #[error("ill-conditioned normal equations (condition {condition:.3e}); use denser sampling or a lower degree")]
    IllConditioned { condition: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("a flow step moves a point {displacement:.4} mm, more than the kernel width {sigma:.4} mm; use more steps")]
    UnstableFlow { displacement: f64, sigma: f64 },

    #[error("optimization diverged after {} accepted steps", trace.len())]
    Divergence { trace: Vec<f64> },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
