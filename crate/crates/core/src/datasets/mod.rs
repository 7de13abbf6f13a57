//! Synthetic dataset generation and the JSONL manifest format.

mod generate;
mod manifest;

pub use generate::{
    assign_splits, generate_classification_dataset, generate_dataset, generate_regression_dataset, jittered_grid,
    split, GenerationConfig,
};
pub use manifest::{
    load_manifest, save_manifest, DatasetKind, DatasetManifest, Label, Record, Split, MANIFEST_FILE, MANIFEST_VERSION,
};
