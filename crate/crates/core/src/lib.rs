//! Anomaly and precursor-of-anomaly detection with dual co-evolving neural
//! controlled differential equations.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod path;
pub mod pipeline;
pub mod solver;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{PadError, Result};
