//! Files, configuration and command-line driver for the D2C pipeline.

pub mod artifact;
pub mod config;
pub mod error;
pub mod par;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::{D2cError, Result};
pub use pipeline::Runner;
