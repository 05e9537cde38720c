//! Event-triggered remote state estimation.
//!
//! A sensor runs a local Kalman filter and transmits its estimate only when
//! a cumulative statistic of normalized innovations crosses a threshold.
//! This crate provides:
//!
//! - [`lin_gauss`]: the linear-Gaussian plant, the local filter, and the
//!   steady-state Riccati fixed point;
//! - [`etc_scheme`]: innovation whitening, the cumulative-innovation
//!   trigger, chi-square machinery, and the unconditional transmission
//!   probability of the scheme;
//! - [`remote_estimator`]: the exact remote MMSE estimator under the
//!   trigger, its conditional-moment factors, and an MSE upper bound;
//! - [`mdp_solver`]: a finite-state MDP over (elapsed time, threshold)
//!   whose value iteration yields the optimal time-varying threshold
//!   policy for discounted estimation-plus-communication cost, and the
//!   vanishing-discount average-cost limit;
//! - [`sim_harness`]: seeded Monte-Carlo simulation of the full pipeline
//!   with cost accounting;
//! - [`validation`]: cross-module property suites used by the CLI.

// `!(x > 0.0)` is used on purpose in validation paths: it rejects NaN
// along with nonpositive values, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod etc_scheme;
pub mod lin_gauss;
pub mod mdp_solver;
pub mod remote_estimator;
pub mod seeding;
pub mod sim_harness;
pub mod validation;

pub use error::{Error, Result};
