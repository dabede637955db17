//! Minimum discounted probability of exponential Parisian ruin for an
//! insurer controlling per-loss reinsurance priced by the mean-variance
//! premium principle.
//!
//! Four complementary routes to the same quantity, which cross-validate one
//! another:
//!
//! - [`diffusion`]: closed-form solution of the diffusion approximation;
//! - [`adjustment`]: classical-model adjustment coefficients and the
//!   analytic sandwich bounds they induce;
//! - [`hjb`]: a grid policy-iteration solver for the classical-model HJB
//!   integro-differential equation;
//! - [`simulator`]: event-driven Monte Carlo of the controlled surplus with
//!   exponential Parisian clocks.

pub mod adjustment;
pub mod claims;
pub mod config;
pub mod diffusion;
pub mod hjb;
pub mod numerics;
pub mod simulator;

pub use claims::{MarketParams, RetentionRule, SeverityModel};
