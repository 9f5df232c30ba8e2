//! Simulation framework for federated hyperparameter tuning under noisy
//! evaluation: synthetic federated workloads, evaluation-noise models,
//! multi-fidelity tuners and a bootstrap experiment harness.

pub mod error;
pub mod fed;
pub mod harness;
pub mod noise;
pub mod proxy;
pub mod seed;
pub mod space;
pub mod stats;
pub mod tuners;

pub use error::{Error, Result};
