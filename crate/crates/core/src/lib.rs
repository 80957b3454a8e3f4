//! Multi-modal diabetic-retinopathy grading and progression-risk pipeline.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense tensors, a reverse-mode tape, layer primitives and Adam.
//! - [`preprocess`]: CLAHE, Gaussian denoising, resizing, blur rejection and augmentation.
//! - [`backbones`]: the convolutional feature pyramid and the patch transformer encoder.
//! - [`graph`]: temporal biomarker graphs and the graph-convolution encoder.
//! - [`fusion`]: cross-attention fusion, prediction heads, MC-dropout uncertainty, saliency.
//! - [`training`]: multi-task loss, the training loop, splits, cross-validation and ablations.
//! - [`synth`]: synthetic cohorts with ground-truth lesions and progression labels.
//! - [`eval`]: classification, ranking, survival and decision-curve metrics.
//! - [`io`]: run configuration, manifests, checkpoints and atomic file output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbones;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod graph;
pub mod io;
pub mod numerics;
pub mod preprocess;
pub mod synth;
pub mod training;

pub use error::{Error, Result};

/// Number of DR severity grades (No DR, Mild, Moderate, Severe, Proliferative).
pub const NUM_GRADES: usize = 5;
