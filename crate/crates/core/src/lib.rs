//! Exponentially smoothed recurrent networks for time-series forecasting.

pub mod bayes;
pub mod cells;
pub mod diagnostics;
pub mod error;
pub mod forecasting;
pub mod io;
pub mod linalg;
pub mod rng;
pub mod synthetic;
pub mod tape;
pub mod training;

pub use error::{Error, Result};
