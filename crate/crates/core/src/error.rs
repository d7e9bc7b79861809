use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("degenerate element geometry: {0}")]
    Geometry(String),

    /// Cholesky breakdown. `dof` is the global DOF of the failing pivot.
    #[error("stiffness matrix not positive definite at DOF {dof} (pivot {pivot:.3e}); structure may be disconnected")]
    NotPositiveDefinite { dof: usize, pivot: f64 },

    #[error("singular internal block in incompatible-mode condensation")]
    SingularCondensation,

    #[error("eigensolver did not converge: {0}")]
    Eigen(String),

    #[error("invalid constraint input: {0}")]
    Constraint(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("optimizer failure: {0}")]
    Optimizer(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
