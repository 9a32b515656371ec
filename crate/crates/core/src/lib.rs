//! Pathwise stochastic calculus on sampled continuous price paths.
//!
//! Everything here is probability-free: a "price path" is a concrete
//! piecewise-linear function of time with values in R^d, and all the usual
//! objects of stochastic calculus are computed path by path.
//!
//! | Module       | Contents                                                              |
//! |--------------|-----------------------------------------------------------------------|
//! | [`paths`]    | Sampled d-dimensional paths, adapted processes, CSV I/O, random walks |
//! | [`lebesgue`] | Level-crossing (Lebesgue) partitions generated by a path             |
//! | [`quadvar`]  | Quadratic covariation matrices along Lebesgue partitions             |
//! | [`strategy`] | Simple trading strategies, their integrals and truncation           |
//! | [`bdg`]      | Discrete pathwise Burkholder-Davis-Gundy hedging and domination checks |
//! | [`sde`]      | Windowed Picard solver for integral equations driven by a path      |
//!
//! The integral equation solved by [`sde`] is
//!
//! ```text
//! X_t = X_0 + int_0^t K(s, X) dA_s + int_0^t F(s, X) dS_s
//! ```
//!
//! where `S` is the driving path, `A` a bounded-variation drift clock and
//! `K`, `F` non-anticipating Lipschitz coefficients. Solutions are produced
//! window by window, each window chosen so the accumulated volatility
//! `|[S]|` and drift variation stay below contraction thresholds.

pub mod bdg;
pub mod lebesgue;
pub mod paths;
pub mod quadvar;
pub mod sde;
pub mod strategy;

use thiserror::Error;

/// Errors surfaced by path construction, partitioning, integration and solving.
#[derive(Debug, Error)]
pub enum Error {
    /// A CSV row failed to parse.
    #[error("parse error at line {line}: {msg}")]
    Parse {
        /// 1-based line number in the input stream.
        line: usize,
        /// What went wrong.
        msg: String,
    },

    /// Input data violated a structural requirement (monotone grid, row shape, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// An argument was outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two objects that must share a grid or dimension do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A stopping rule kept emitting rebalancing times past the configured cap.
    #[error("stopping rule exceeded {cap} rebalancing times without terminating")]
    NonTerminating {
        /// The cap that was hit.
        cap: usize,
    },

    /// A capital level below the per-path requirement was supplied.
    #[error("lambda {supplied} is below the per-path requirement {required}")]
    InsufficientLambda {
        /// The capital that was passed in.
        supplied: f64,
        /// The smallest admissible capital for this path.
        required: f64,
    },

    /// The produced window schedule contradicts the window-counting bound.
    #[error("window accounting violated: {closed} closed windows exceed the bound {bound}")]
    WindowCount {
        /// Closed windows produced by the solver.
        closed: usize,
        /// Largest count permitted by the counting lemma.
        bound: usize,
    },

    /// An I/O failure while reading or writing path files.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
