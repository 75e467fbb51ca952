//! Likelihood-free (approximate Bayesian computation) samplers over `S ≥ 1`
//! simulated auxiliary datasets.
//!
//! The crate provides rejection, Metropolis–Hastings and SMC samplers that
//! share one kernel and target layer, two toy models with analytic oracles
//! for the smoothed posterior, and a harness that runs configurable
//! experiments and writes reproducible CSV/JSON output.

pub mod diagnostics;
pub mod equivalence;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod mcmc;
pub mod model;
pub mod quadrature;
pub mod rejection;
pub mod rng;
pub mod smc;
pub mod target;

pub use error::{LfsError, Result};
pub use kernel::{KernelKind, SmoothingKernel, SummaryDistance};
pub use model::{
    AnalyticOracle, AuxiliaryBundle, BernoulliCount, Model, NormalMean, ParamVector, SummaryVector,
};
pub use rng::{SeedStreams, Stream, StreamTag};
