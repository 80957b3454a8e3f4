//! Image encoders: a strided convolutional pyramid producing a `G×G×C` feature
//! map, and a patch transformer producing `(N+1)×D` tokens.

mod cnn;
mod vit;

pub use cnn::{Cnn, CnnConfig, CnnStage};
pub use vit::{transformer_encode, PatchEmbedding, TransformerBlock, Vit, VitConfig};
