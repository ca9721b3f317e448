//! Deep multiple instance learning toolkit.
//!
//! - [`bagdata`]: bags, padded/masked batches, instance graphs
//! - [`datasets`]: the `.milt` array format, processed dataset directories,
//!   seeded synthetic generators
//! - [`nn`]: masked softmax, attention pooling, transformer encoder layer,
//!   graph convolution and graph smoothing, on a reverse-mode tape
//! - [`models`]: the [`MilModel`] interface and reference models
//! - [`training`]: trainer, metrics, splits and benchmark tables
//! - [`testing`]: conformance checks for any [`MilModel`]

pub mod bagdata;
pub mod datasets;
pub mod error;
pub mod models;
pub mod nn;
pub mod testing;
pub mod training;

pub use bagdata::{collate, uncollate, Adjacency, Bag, Batch};
pub use error::{MilError, Result};
pub use models::{build_model, MilModel, ModelConfig};
pub use training::{evaluate, train, Metrics, RunConfig};
