//! Error type shared across the crate.
//!
//! Variants carry enough context to act on (which node, which line, which
//! parameter) without dragging generic scalar types into the error path:
//! everything numeric is reported as `f64`.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tree construction got an empty location list.
    #[error("cannot build a tree over an empty location list")]
    EmptyLocations,

    /// Tree/chain/config parameters failed validation.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A location had a NaN or infinite coordinate.
    #[error("non-finite coordinate in location at input ordinal {ordinal}")]
    NonFiniteCoordinate { ordinal: usize },

    /// Two expanded locations (coordinates + variable) coincide.
    #[error("duplicate expanded location at input ordinals {first} and {second}")]
    DuplicateLocation { first: usize, second: usize },

    /// Covariance parameters violate their constraints.
    #[error("invalid covariance parameters: {0}")]
    InvalidTheta(String),

    /// A covariance block stayed non-positive-definite after the jitter
    /// ladder was exhausted.
    #[error("{what}: not positive definite (jitter escalated to {max_jitter:.1e})")]
    NotPositiveDefinite { what: String, max_jitter: f64 },

    /// Block-matrix shapes or sparsity patterns disagree.
    #[error("block structure mismatch: {0}")]
    BlockMismatch(String),

    /// The integrated-likelihood path needs the observation design to stay
    /// within node blocks; this data set couples latents across nodes.
    #[error(
        "integrated mode requires the observation design to touch one node per row; \
         row {row} links latents in nodes {node_a} and {node_b}"
    )]
    CrossNodeDesign {
        row: usize,
        node_a: usize,
        node_b: usize,
    },

    /// The integrated-likelihood path is capped to keep dense work bounded.
    #[error("integrated mode capped at {cap} latent scalars, model has {actual}")]
    IntegratedCapExceeded { cap: usize, actual: usize },

    /// Dense synthetic sampling is capped (full Cholesky of the joint).
    #[error("dense synthetic sampling capped at {cap} scalars, requested {actual}")]
    DenseCapExceeded { cap: usize, actual: usize },

    /// A text artifact (data file, dag file, sample table) failed to parse.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Model pieces that must agree (dag vs data vs draws) do not.
    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
