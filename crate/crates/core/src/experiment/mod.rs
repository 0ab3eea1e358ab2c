//! Runs, metrics and exports built on the engine.

pub mod config;
pub mod export;
pub mod metrics;
pub mod runner;

pub use config::{DatasetKind, RunConfig};
pub use metrics::{acc_metric, bwt_metric, mean_std, AccuracyMatrix};
pub use runner::{Method, RunReport};
