//! Tabular policy-evaluation laboratory built around a family of
//! gap-increasing off-policy backup operators.
//!
//! The crate provides:
//!
//! - exact tabular MDPs, policies, and action-value tables ([`mdp`]);
//! - closed-form applications of the multi-step off-policy backup, the
//!   gap-increasing backup, and its perturbation propagator, together with
//!   their contraction moduli ([`operators`]);
//! - linear solvers for exact action values, state values, advantages, and
//!   goal-reaching probabilities ([`solve`]);
//! - exact-dynamic-programming experiment drivers: noisy iteration,
//!   decomposition and bound checks, error-decay weights, accumulation
//!   variance, and learning-rate envelopes ([`dp_lab`]);
//! - simulated environments (a slippery corridor and an 8x8 icy grid) with
//!   replay storage ([`envs`]);
//! - sampled multi-step targets, table updates, and regularized policy
//!   improvement for model-free runs ([`model_free`]);
//! - error metrics and the policy-reuse evaluation bound ([`metrics`]);
//! - seeded randomness helpers and random problem generators ([`sample`]);
//! - self-contained verification suites with independent series oracles
//!   ([`verify`]).

pub mod dp_lab;
pub mod envs;
pub mod error;
mod linalg;
pub mod mdp;
pub mod metrics;
pub mod model_free;
pub mod operators;
pub mod sample;
pub mod solve;
pub mod verify;

pub use error::{GrapeError, Result};
pub use mdp::{two_state_mdp, AlgoParams, Policy, QTable, TabularMdp, VTable};
