//! Inference engine for doubly stochastic Dirichlet process mixtures with a
//! marked sigmoidal Gaussian Cox process prior.

pub mod error;
pub mod experiments;
pub mod expfam_model;
pub mod partition_laws;
pub mod samplers;
pub mod sgp_prior;
pub mod special;

pub use error::{DsdpError, Result};
