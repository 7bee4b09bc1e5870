//! File formats, run configuration, a cached pipeline driver and report
//! writers around `multictx-core`.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod report;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use pipeline::{Cache, Driver, Experiment};
