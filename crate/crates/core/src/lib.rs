//! Zeroth-order stochastic optimization with sparsity-inducing projections.
//!
//! The crate is organised around a metered black-box oracle:
//!
//! * [`oracle`] wraps a stochastic objective `f(x, ξ)` behind an
//!   [`OracleSession`](oracle::OracleSession) that counts every scalar
//!   evaluation against an optional budget.
//! * [`smoothing`] builds the Rademacher two-point gradient estimator and the
//!   exhaustive-enumeration checks of its bias.
//! * [`projection`] implements the hard-threshold-then-ℓ1 projection used at
//!   every iteration, together with a KKT certificate and a grid oracle.
//! * [`sisgf`] drives the main iteration under the convex and strongly convex
//!   schedules, with randomized and minimum-in-sample-cost outputs.
//! * [`baselines`] holds the Gaussian-smoothing SGF comparison method.
//! * [`bench`] generates the synthetic stochastic quadratic problems and runs
//!   replicated experiments, in parallel when the `parallel` feature is on.
//!
//! All randomness is derived from a single root seed through keyed
//! counter-based streams ([`rng`]), so every run is replayable bit for bit.

pub mod baselines;
pub mod bench;
pub mod oracle;
pub mod projection;
pub mod rng;
pub mod sisgf;
pub mod smoothing;
pub mod stats;
pub mod testfns;
pub mod verify;

pub use oracle::{OracleError, OracleSession, ProblemSpec, StochasticObjective};
pub use projection::{sparsify_project, ProjectionCertificate, ProjectionInput};
pub use rng::{Purpose, RngRoot, StreamId};
pub use sisgf::{HyperParams, RunResult, Variant};

/// ℓ1 norm of a slice.
pub fn l1_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

/// Euclidean norm of a slice.
pub fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Number of nonzero entries.
pub fn support_size(x: &[f64]) -> usize {
    x.iter().filter(|v| **v != 0.0).count()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
