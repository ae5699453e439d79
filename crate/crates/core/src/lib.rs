//! Branching processes in a random environment with one immigrant per
//! generation: exact single-clan survival probabilities, tilted and
//! conditioned random-walk estimators, and Monte Carlo limit diagnostics.

pub mod env_model;
pub mod error;
pub mod bpire;
pub mod cli;
pub mod conditioned;
pub mod exact;
pub mod limits;
pub mod mc;
pub mod quad;
pub mod tilt;
pub mod walk;

pub use error::{Error, Result};
