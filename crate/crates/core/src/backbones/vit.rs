use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{normal_init, Bindings, LayerNorm, Linear, MultiHeadAttention, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
}

impl VitConfig {
    pub fn desk() -> Self {
        Self {
            image_size: 64,
            in_channels: 3,
            patch_size: 16,
            embed_dim: 32,
            depth: 2,
            heads: 4,
            mlp_ratio: 2.0,
        }
    }

    /// ViT-Base geometry at 224 px: 196 patches of 16 px, width 768, 12 blocks.
    pub fn paper() -> Self {
        Self {
            image_size: 224,
            in_channels: 3,
            patch_size: 16,
            embed_dim: 768,
            depth: 12,
            heads: 12,
            mlp_ratio: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::config(format!(
                "image size {} is not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return Err(Error::config("mlp_ratio must give a positive hidden width"));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        let g = self.image_size / self.patch_size;
        g * g
    }

    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.in_channels
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.mlp_ratio * self.embed_dim as f64).round() as usize
    }

    /// Symbolic `[N+1, D]` token shape.
    pub fn output_shape(&self) -> Result<[usize; 2]> {
        self.validate()?;
        Ok([self.num_tokens(), self.embed_dim])
    }

    pub fn block_param_count(&self) -> usize {
        let d = self.embed_dim;
        let h = self.mlp_hidden();
        2 * 2 * d + MultiHeadAttention::param_count(d) + Linear::param_count(d, h, true) + Linear::param_count(h, d, true)
    }

    pub fn embedding_param_count(&self) -> usize {
        let d = self.embed_dim;
        Linear::param_count(self.patch_dim(), d, true) + d + self.num_tokens() * d
    }

    pub fn param_count(&self) -> usize {
        self.embedding_param_count() + self.depth * self.block_param_count()
    }
}

/// Patch projection, learned class token `[1×D]` and positional table `[(N+1)×D]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchEmbedding {
    pub proj: Linear,
    pub class_token: ParamId,
    pub positions: ParamId,
    pub patch_size: usize,
}

impl PatchEmbedding {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &VitConfig, rng: &mut R) -> Self {
        let d = cfg.embed_dim;
        Self {
            proj: Linear::new(store, &format!("{name}.proj"), cfg.patch_dim(), d, true, rng),
            class_token: store.add(format!("{name}.class_token"), normal_init(&[1, d], 0.02, rng)),
            positions: store.add(format!("{name}.positions"), normal_init(&[cfg.num_tokens(), d], 0.02, rng)),
            patch_size: cfg.patch_size,
        }
    }

    /// Row 0 is the class token, rows `1..=N` the projected patches, each plus its positional row.
    pub fn forward(&self, tape: &mut Tape, params: &Bindings, image: Var) -> Result<Var> {
        let patches = tape.patchify(image, self.patch_size)?;
        let projected = self.proj.forward(tape, params, patches)?;
        let tokens = tape.concat_rows(&[params.var(self.class_token), projected])?;
        tape.add(tokens, params.var(self.positions))
    }
}

/// Pre-norm block: `x + MHA(LN(x))`, then `x + MLP(LN(x))` with a GELU MLP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerBlock {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &VitConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.embed_dim;
        let h = cfg.mlp_hidden();
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, cfg.heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d),
            fc1: Linear::new(store, &format!("{name}.fc1"), d, h, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), h, d, true, rng),
        })
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bindings, x: Var) -> Result<Var> {
        let n = self.norm1.forward(tape, params, x)?;
        let a = self.attn.forward(tape, params, n, n, n)?.output;
        let x = tape.add(x, a)?;
        let n = self.norm2.forward(tape, params, x)?;
        let h = self.fc1.forward(tape, params, n)?;
        let h = tape.gelu(h);
        let h = self.fc2.forward(tape, params, h)?;
        tape.add(x, h)
    }
}

/// Runs `blocks` in order; an empty slice is the identity.
pub fn transformer_encode(tape: &mut Tape, params: &Bindings, blocks: &[TransformerBlock], tokens: Var) -> Result<Var> {
    blocks.iter().try_fold(tokens, |x, b| b.forward(tape, params, x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vit {
    pub config: VitConfig,
    pub embedding: PatchEmbedding,
    pub blocks: Vec<TransformerBlock>,
}

impl Vit {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: &VitConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let embedding = PatchEmbedding::new(store, &format!("{name}.embed"), config, rng);
        let blocks = (0..config.depth)
            .map(|i| TransformerBlock::new(store, &format!("{name}.block{i}"), config, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: config.clone(),
            embedding,
            blocks,
        })
    }

    /// `[S×S×C]` image to `[(N+1)×D]` encoded tokens.
    pub fn forward(&self, tape: &mut Tape, params: &Bindings, image: Var) -> Result<Var> {
        let tokens = self.embedding.forward(tape, params, image)?;
        transformer_encode(tape, params, &self.blocks, tokens)
    }
}
