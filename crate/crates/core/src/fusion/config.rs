use serde::{Deserialize, Serialize};

use crate::backbones::{CnnConfig, VitConfig};
use crate::error::{Error, Result};
use crate::graph::{GcnConfig, READOUT_DIM};
use crate::numerics::{Linear, MultiHeadAttention};
use crate::NUM_GRADES;

/// Width of the fused representation.
pub const FUSED_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub cnn: CnnConfig,
    pub vit: VitConfig,
    pub gcn: GcnConfig,
    /// Metadata width `d_m`.
    pub meta_dim: usize,
    pub cross_heads: usize,
    pub dropout: f64,
    /// Months per unit of the node time feature.
    pub time_scale: f64,
    pub use_vit: bool,
    pub use_gnn: bool,
}

/// Feature widths obtained without allocating any weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ShapeReport {
    pub cnn: [usize; 3],
    pub vit: [usize; 2],
    pub gnn: usize,
    pub fusion_input: usize,
    pub fused: usize,
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            cnn: CnnConfig::desk(),
            vit: VitConfig::desk(),
            gcn: GcnConfig::desk(),
            meta_dim: Metadata::DIM,
            cross_heads: 4,
            dropout: 0.3,
            time_scale: 60.0,
            use_vit: true,
            use_gnn: true,
        }
    }

    pub fn paper() -> Self {
        Self {
            cnn: CnnConfig::paper(),
            vit: VitConfig::paper(),
            gcn: GcnConfig::paper(),
            meta_dim: Metadata::DIM,
            cross_heads: 12,
            dropout: 0.3,
            time_scale: 60.0,
            use_vit: true,
            use_gnn: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    /// Width of the token stream handed to fusion.
    pub fn embed_dim(&self) -> usize {
        self.vit.embed_dim
    }

    pub fn fusion_input_dim(&self) -> usize {
        self.embed_dim() + if self.use_gnn { READOUT_DIM } else { 0 } + self.meta_dim
    }

    /// Symbolic shape trace through every stage.
    pub fn shapes(&self) -> Result<ShapeReport> {
        let cnn = self.cnn.output_shape()?;
        let vit = self.vit.output_shape()?;
        self.gcn.validate()?;
        if self.vit.image_size != self.cnn.input_size || self.vit.in_channels != self.cnn.in_channels {
            return Err(Error::config("CNN and ViT must read the same image geometry"));
        }
        let d = self.embed_dim();
        if self.cross_heads == 0 || !d.is_multiple_of(self.cross_heads) {
            return Err(Error::config(format!(
                "embed width {d} is not divisible by {} cross-attention heads",
                self.cross_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        if !(self.time_scale > 0.0) {
            return Err(Error::config("time_scale must be positive"));
        }
        Ok(ShapeReport {
            cnn,
            vit,
            gnn: READOUT_DIM,
            fusion_input: self.fusion_input_dim(),
            fused: FUSED_DIM,
        })
    }

    /// Exact learnable scalar count of the assembled model.
    pub fn param_count(&self) -> usize {
        let d = self.embed_dim();
        let mut n = self.cnn.param_count() + Linear::param_count(self.cnn.output_channels, d, true);
        if self.use_vit {
            n += self.vit.param_count() + MultiHeadAttention::param_count(d);
        }
        if self.use_gnn {
            n += self.gcn.param_count();
        }
        n + Linear::param_count(self.fusion_input_dim(), FUSED_DIM, false)
            + Linear::param_count(FUSED_DIM, NUM_GRADES, true)
            + Linear::param_count(FUSED_DIM, 1, true)
    }
}

/// Patient metadata before normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub age: f64,
    pub diabetes_years: f64,
}

impl Metadata {
    pub const DIM: usize = 2;
    pub const AGE_RANGE: (f64, f64) = (18.0, 90.0);
    pub const DURATION_RANGE: (f64, f64) = (0.0, 50.0);

    /// Min-max against fixed reference ranges, clamped to `[0, 1]`.
    pub fn to_vector(&self) -> Result<Vec<f64>> {
        if !(self.age.is_finite() && self.diabetes_years.is_finite()) {
            return Err(Error::NonFinite("metadata".into()));
        }
        let scale = |v: f64, (lo, hi): (f64, f64)| ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        Ok(vec![
            scale(self.age, Self::AGE_RANGE),
            scale(self.diabetes_years, Self::DURATION_RANGE),
        ])
    }
}
