//! Finite-time stable pose estimation on TSE(3) from point-cloud measurements.

pub mod baselines;
pub mod error;
pub mod geometry;
pub mod io;
pub mod measurements;
pub mod observer;
pub mod sim;
pub mod velocity_filter;

pub use error::{Error, Result};
