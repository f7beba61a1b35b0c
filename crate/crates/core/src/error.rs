use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: unsupported or malformed image: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("empty foreground")]
    EmptyForeground,

    #[error("shape has {0} components; exactly one 4-connected component is required")]
    MultipleComponents(usize),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("{path}: line {line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("duplicate id {0:?} in manifest")]
    DuplicateId(String),

    #[error("{path}: line {line}: {reason}")]
    Csv {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("conjugate gradient did not converge: relative residual {residual:.3e} after {iterations} iterations (tol {tol:.1e})")]
    SolverDiverged {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("singular value decomposition failed: {0}")]
    Svd(String),

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("cache entry {path} is corrupt: {reason}")]
    Cache { path: PathBuf, reason: String },

    #[error("stage {stage} failed for shape {shape}")]
    Stage {
        stage: &'static str,
        shape: String,
        #[source]
        source: Box<Error>,
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

pub type Result<T> = std::result::Result<T, Error>;
