//! Minimum-contrast estimation for density-dependent Markov jump processes
//! observed at discrete times, via their Gaussian diffusion approximation.
//!
//! A model is a [`model::TransitionTable`] of jumps and rate functions. From it
//! the crate derives drift, diffusion matrix and Jacobians, simulates exact,
//! tau-leap and diffusion trajectories ([`simulate`]), integrates the
//! deterministic flow with resolvents and conditional covariances
//! ([`odeflow`]), and fits parameters by minimizing a Gaussian contrast
//! ([`contrast`]).

pub mod contrast;
pub mod error;
pub mod linalg;
pub mod mle;
pub mod model;
pub mod models;
pub mod odeflow;
pub mod scenario;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
