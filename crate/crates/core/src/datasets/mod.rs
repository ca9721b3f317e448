//! Storage format, dataset reader and synthetic generators.

pub mod array_file;
mod processed;
mod synthetic;

pub use array_file::{read_array, write_array, ArrayData, DType};
pub use processed::{is_valid_bag_id, save_dataset, ProcessedMILDataset};
pub use synthetic::{generate, grid_coords, SyntheticKind, SyntheticSpec};

/// Names of the field directories inside a dataset root.
pub mod fields {
    pub use super::processed::{ADJACENCY, COORDS, FEATURES, INST_LABELS, LABELS, MANIFEST};
}
