//! Annealed decoupled posterior sampling for single-channel source separation.

pub mod basis;
pub mod config;
pub mod error;
pub mod mixkit;
pub mod priors;
pub mod rng;
pub mod sampler;
pub mod schedules;
pub mod spectral;
pub mod wav;

pub use error::{Error, Result};
