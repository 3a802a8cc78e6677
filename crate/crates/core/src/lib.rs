pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod dcore;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod thresholds;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
