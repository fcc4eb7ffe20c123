//! Graph filter policies for power allocation in wireless interference
//! networks, their baselines, and numerical checks of spectral filter
//! stability under additive operator perturbations.

pub mod allocators;
pub mod error;
pub mod experiments;
pub mod gnn;
pub mod netgen;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
