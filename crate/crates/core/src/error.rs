//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Step-size underflow or a non-finite state; carries the last abscissa reached.
    #[error("integration failed at x = {x}: {reason}")]
    Integration { x: f64, reason: String },

    /// Evaluation outside a trajectory's range.
    #[error("abscissa {x} outside [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },

    /// Invalid argument or configuration.
    #[error("{0}")]
    Domain(String),

    /// A root bracket could not be established.
    #[error("no sign change of {what} in [{lo}, {hi}]; {hint}")]
    BracketNotFound {
        what: String,
        lo: f64,
        hi: f64,
        hint: String,
    },

    /// A depth beyond the generated trajectory was requested.
    #[error("requested depth {requested} exceeds generated depth {available}; extend the generator")]
    DepthExceeded { requested: f64, available: f64 },

    /// A computed spectrum contradicts a structural guarantee (e.g. mu_3 <= 0).
    #[error("spectral anomaly: {0}")]
    SpectralAnomaly(String),

    /// The mu_2 sign change was not found below the sweep cap.
    #[error(
        "mu_2 does not change sign below alpha_max = {alpha_max} \
         (mu_2 there = {mu2_at_max}); raise alpha_max"
    )]
    NoCrossing { alpha_max: f64, mu2_at_max: f64 },

    /// Continuation of the non-even branch failed after refinement.
    #[error("non-even branch lost near lambda = {lambda}: {detail}")]
    BranchLost { lambda: f64, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
