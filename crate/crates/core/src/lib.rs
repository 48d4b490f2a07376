//! Ensemble filtering of binary state vectors.
//!
//! The central object is a per-step updating distribution `q(x̃ | x, y)`
//! that moves an ensemble of binary vectors from an assumed prior Markov
//! chain to the matching posterior chain while changing as few vector
//! components as possible in expectation. The crate provides:
//!
//! - [`chain`]: inhomogeneous binary first-order Markov chains and exact
//!   posterior chains under node-wise likelihoods,
//! - [`cpl`]: continuous piecewise-linear value functions,
//! - [`optimizer`]: the backward/forward dynamic program that builds the
//!   optimal [`TransitionRule`] out of parametric piecewise-linear programs,
//! - [`ensemble`]: ensemble containers, Bayesian chain estimation and
//!   stochastic member updates,
//! - [`true_process`]: the synthetic spatio-temporal truth model used in
//!   the simulation experiments,
//! - [`oracle`]: independent brute-force references (exact filtering,
//!   pushforward enumeration, grid dynamic programming),
//! - [`evaluation`]: marginal and contact metrics for method comparison.

pub mod chain;
pub mod cpl;
pub mod csvfmt;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod optimizer;
pub mod oracle;
pub mod rng;
pub mod toy;
pub mod true_process;

pub use chain::{
    posterior_chain, stationary_init, BinaryMarkovChain, BinaryVector, GaussianNodeLikelihood,
};
pub use cpl::CplFunction;
pub use ensemble::{estimate_chain, resample_assumed, update_member, Ensemble, EstimationPrior};
pub use error::{Error, Result};
pub use evaluation::MarginalMatrix;
pub use optimizer::{build_optimal_q, QFirst, QStep, TransitionRule};
pub use oracle::ExactFilterState;
pub use true_process::{ProcessConfig, TrueModelTable};

