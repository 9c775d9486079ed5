//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by solvers, constructions, and I/O.
///
/// Dimension mismatches between in-process objects are contract violations
/// and panic instead; `Error` covers conditions driven by the input data.
#[derive(Debug, Error)]
pub enum Error {
    /// Symmetric factorization hit a non-positive pivot.
    #[error("matrix is not positive definite: non-positive pivot at index {pivot} ({value:.3e})")]
    NotSpd { pivot: usize, value: f64 },

    /// An iterative solve produced a non-finite intermediate value.
    #[error("iterative solver breakdown at iteration {iteration}: {detail}")]
    Breakdown { iteration: usize, detail: String },

    /// An iterative method ran out of iterations.
    #[error("{what} did not converge: achieved residual {achieved:.3e} (target {target:.3e})")]
    NotConverged {
        what: String,
        achieved: f64,
        target: f64,
    },

    /// A matrix expected to have full rank does not.
    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    /// Structural inconsistency in user-supplied data (shapes, patterns, labels).
    #[error("structure error: {0}")]
    Structure(String),

    /// Input validation failure (bad coefficient, self-loop, bad flag value).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Requested object exceeds a configured size cap.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A per-level solve inside the hierarchy failed.
    #[error("solve failed at level {level}: {source}")]
    LevelSolve {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    /// Matrix Market (or other text format) parse failure.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wraps an error with the hierarchy level it occurred at.
    pub fn at_level(self, level: usize) -> Error {
        Error::LevelSolve {
            level,
            source: Box::new(self),
        }
    }
}
