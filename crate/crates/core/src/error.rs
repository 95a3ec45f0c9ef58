use std::io;

use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ill-conditioned material: Poisson ratio {nu:.6} exceeds 0.4999")]
    IllConditionedMaterial { nu: f64 },

    #[error("element {element} inverted (det F = {det:.3e})")]
    ElementInversion { element: usize, det: f64 },

    #[error("singular system: pivot {pivot:.3e} at global dof {dof}")]
    SingularSystem { dof: usize, pivot: f64 },

    #[error("newton solve did not converge at load factor {load_factor:.4}: residual {residual:.3e}")]
    NonConvergence { load_factor: f64, residual: f64 },

    #[error("optimization failed at iteration {iteration}: {source}")]
    Optimization {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("MMA subproblem failed: {0}")]
    Subproblem(String),

    #[error("tangent factorization unavailable")]
    MissingFactorization,

    #[error("unsupported size {nx}x{ny}: channels hold at most 63x63 elements")]
    UnsupportedSize { nx: usize, ny: usize },

    #[error("bad shard magic")]
    BadMagic,

    #[error("unsupported shard version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("shard truncated: {0}")]
    Truncated(String),

    #[error("checksum mismatch in record {record}")]
    Checksum { record: usize },

    #[error("malformed shard header: {0}")]
    Header(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
