use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A standing assumption on the weight or coefficient families fails.
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("{what} did not converge within {limit} terms (tail bound {bound:.3e})")]
    Convergence {
        what: &'static str,
        limit: usize,
        bound: f64,
    },

    #[error("singular 2x2 matrix (det = {det:.3e})")]
    Singular { det: f64 },

    /// Overflow or NaN while recursing; the message names the quantity.
    #[error("non-finite value in {0}; reduce k_max or rescale the mode")]
    Range(String),

    #[error("boundary rule rejected for m = {m}: {clause}")]
    BoundaryRule { m: i64, clause: String },

    #[error("degenerate pairing tau = {tau:.3e} for mode ({m}, {n})")]
    DegeneratePairing { m: i64, n: usize, tau: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("truncated system singular for mode ({m}, {n}); smallest singular value {smin:.3e}")]
    SingularSystem { m: i64, n: usize, smin: f64 },

    /// Wraps an error raised while processing a single mode.
    #[error("mode ({m}, {n}): {source}")]
    Mode {
        m: i64,
        n: usize,
        source: Box<Error>,
    },
}

impl Error {
    pub fn at_mode(self, m: i64, n: usize) -> Self {
        match self {
            e @ Error::Mode { .. } => e,
            e => Error::Mode {
                m,
                n,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
