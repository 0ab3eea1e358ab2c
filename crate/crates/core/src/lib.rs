//! Fixed-capacity continual learning with adaptive sparse training.
//!
//! Each task in a class-incremental sequence gets its own sparse connections,
//! allocated among free neurons of a shared network. While the task trains,
//! its connections are periodically rewired toward the neurons that matter most
//! for it; afterwards its most important neurons are reserved, its weights are
//! frozen and its classifier is stashed until inference. Prediction uses one
//! shared output layer and never consults task identity.

pub mod conv;
pub mod data;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod seed;
pub mod tensor;
pub mod topology;

pub use engine::{Architecture, HiddenLayer, NetworkState, TaskPlan};
pub use error::{Error, Result};
pub use experiment::metrics::AccuracyMatrix;
pub use tensor::{Batch, GradBuffer, Matrix};
pub use topology::{ConnectionSet, Coord, ImportanceLedger, OccupancyGrid};
