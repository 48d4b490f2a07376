//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by chain construction, the coupling solvers and the
/// brute-force oracles.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A probability parameter lies outside `[0, 1]` or is not finite.
    #[error("invalid probability {value} for {what}")]
    InvalidProbability { what: &'static str, value: f64 },

    /// Both self-transition probabilities equal one; the two-state chain
    /// has no unique stationary law.
    #[error("no unique stationary law")]
    NoStationaryLaw,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("index {index} out of range {lo}..={hi}")]
    IndexOutOfRange { index: usize, lo: usize, hi: usize },

    /// Evaluation point outside the function domain beyond tolerance.
    #[error("parameter {t} outside domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },

    #[error("need at least 2 distinct breakpoints, got {got}")]
    TooFewBreakpoints { got: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    /// The feasible region of a single linear subproblem is empty. Callers
    /// iterating over value-function pieces treat this as "piece inactive".
    #[error("infeasible subproblem")]
    InfeasibleSubproblem,

    /// Every subproblem was infeasible at some parameter value. Impossible
    /// for consistent prior/posterior chains; kept as a bug sentinel.
    #[error("inconsistent chains: no feasible subproblem at t = {t} (step {k})")]
    InconsistentChains { k: usize, t: f64 },

    #[error("state space too large: n = {n} exceeds limit {limit}")]
    StateSpaceTooLarge { n: usize, limit: usize },

    #[error("{0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
