//! Cross-attention fusion of image, graph and metadata streams, the grade and
//! risk heads, Monte-Carlo dropout uncertainty, risk tiers and saliency.

mod config;
mod layers;
mod model;
mod saliency;
mod uncertainty;

pub use config::{Metadata, ModelConfig, ShapeReport, FUSED_DIM};
pub use layers::{cross_attend, flatten_cnn, fuse};
pub use model::{Encoded, FusionModel, HeadOutput, ModelInput};
pub use saliency::{saliency_map, top_mass_in_boxes, SaliencyTarget};
pub use uncertainty::{stratify_risk, summarize_mc, McPrediction, RiskTier, CI_Z};
