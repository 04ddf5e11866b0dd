//! Personalized federated learning with multi-branch layers.
//!
//! Every dense layer holds `B` parallel weight matrices. Each client mixes
//! them with its own simplex weights `α`, trains `α` and the branches in two
//! local phases, and the server averages each branch with coefficients
//! proportional to how much each client relies on it.
//!
//! - [`nn`]: multi-branch layers, forward/backward, gradient checking.
//! - [`federation`]: client sampling, local learning, aggregation, baselines.
//! - [`data`]: synthetic tasks, CSV loading, non-IID partitioning.
//! - [`metrics`]: evaluation, mixing-weight similarity, result files.

pub mod data;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
