//! In-memory bag and batch representations.
//!
//! A [`Bag`] is one labelled example; [`collate`] pads a list of bags into a
//! [`Batch`] with a boolean instance mask, and [`uncollate`] undoes it.

mod bag;
mod batch;
mod graph;

pub use bag::{Adjacency, Bag};
pub use batch::{collate, uncollate, Batch};
pub use graph::{build_adjacency, normalize_adjacency, Metric, NormMode, SparseMatrix};

/// Default neighbourhood for integer patch-grid coordinates (4-neighbourhood).
pub const DEFAULT_GRAPH_THRESHOLD: f64 = 1.0;
pub const DEFAULT_GRAPH_METRIC: Metric = Metric::L1;
