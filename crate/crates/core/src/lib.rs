//! Monocular depth estimation posed as per-pixel classification over
//! log-spaced depth bins.

pub mod bins;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod experiments;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
