//! Persistence: run configuration, dataset manifests, checkpoints, and
//! training logs.

pub mod checkpoint;
pub mod config;
pub mod manifest;
pub mod metrics;

pub use checkpoint::TensorEntry;
pub use config::RunConfig;
pub use manifest::{Meta, Record};
