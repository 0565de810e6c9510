pub mod cluster;
pub mod dataset;
pub mod deconvolver;
pub mod error;
pub mod error_model;
pub mod hetero_stage1;
pub mod mixture;
pub mod simulation;
pub mod splines;
pub mod stats;

pub use dataset::ReplicateDataset;
pub use error::{Error, Result};
