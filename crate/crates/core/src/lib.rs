//! Leader-follower sparse optimal control at desk scale.
//!
//! * [`kernels`]: interaction laws `H` and their convolution with empirical measures.
//! * [`measures`]: empirical measures, configurations and exact Wasserstein-1 distances.
//! * [`dynamics`]: RK4 integration of the controlled system and a-priori envelopes.
//! * [`control`]: piecewise-constant controls, the L1 cost and running costs.
//! * [`limits_harness`]: mean-field, stability and Gamma-convergence experiments.
//! * [`sparse_optimizer`]: proximal-gradient sparse optimal control with a discrete adjoint.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod kernels;
pub mod limits_harness;
pub mod measures;
pub mod sparse_optimizer;
pub mod sum;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
