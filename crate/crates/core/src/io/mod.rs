//! Run configuration, CSV tables, checkpoints and atomic file output.

mod artifacts;
mod atomic;
mod checkpoint;
mod config;
mod dataset;
mod tables;

pub use artifacts::{write_evaluation, write_json, REPORT_FILE};
pub use atomic::write_atomic;
pub use checkpoint::{
    config_hash, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, RngState,
    FORMAT_VERSION, MAGIC,
};
pub use dataset::{load_dataset, resolve_image, Dataset, QualityRow};
pub use config::{Paths, Preset, RunConfig, SEED_ENV};
pub use tables::{
    read_biomarkers, read_lesions, read_manifest, read_predictions, write_cohort, write_csv, write_predictions,
    BiomarkerRow, LesionRow, ManifestRow, BIOMARKER_FILE, LESION_FILE, MANIFEST_FILE,
};
