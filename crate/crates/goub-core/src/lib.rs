//! Numerics for point-to-point diffusion between paired states.
//!
//! A mean-reverting process with stationary variance `lambda2` is
//! conditioned, through an added drift term, to hit a fixed terminal state
//! exactly. The crate provides the discretized schedule, the exact
//! transition kernels of both the free and the conditioned process, forward
//! and reverse samplers, mean-matching training of a small noise predictor,
//! and closed-form oracles for Gaussian data priors that every formula is
//! verified against.

pub mod bridge;
pub mod error;
pub mod gou;
pub mod oracle;
pub mod predictor;
pub mod restoration;
pub mod rng;
pub mod samplers;
pub mod schedule;
pub mod state;
pub mod training;

pub use error::{Error, Result};
pub use state::State;
