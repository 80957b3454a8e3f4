use rand::Rng;

use super::config::{ModelConfig, FUSED_DIM};
use super::layers::{cross_attend, flatten_cnn, fuse};
use super::saliency::{saliency_map, SaliencyTarget};
use super::uncertainty::{summarize_mc, McPrediction};
use crate::backbones::{Cnn, Vit};
use crate::error::{Error, Result};
use crate::graph::{Gcn, TemporalGraph};
use crate::numerics::{
    dropout_mask, fan_in_uniform, sigmoid, softmax, Bindings, DropoutMode, Linear, MultiHeadAttention, ParamId,
    ParamStore, Tape, Tensor, Var,
};
use crate::NUM_GRADES;

/// Everything the model reads for one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    /// `[S×S×C]` preprocessed image.
    pub image: Tensor,
    pub graph: TemporalGraph,
    /// Normalised metadata of width `d_m`.
    pub meta: Vec<f64>,
}

/// Tape handles of the two heads.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    /// `[1×5]` class logits.
    pub logits: Var,
    /// `[1×5]` class probabilities.
    pub probs: Var,
    /// `[1×1]` risk before the sigmoid.
    pub risk_logit: Var,
    /// `[1×1]` risk in `[0, 1]`.
    pub risk: Var,
}

/// Intermediate handles of one encoding pass.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub cnn: Var,
    pub tokens: Option<Var>,
    pub graph: Option<Var>,
    /// `[1×512]` fused representation.
    pub fused: Var,
}

/// CNN + ViT + GCN encoders, cross-attention fusion and the grade/risk heads.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub cnn: Cnn,
    pub vit: Option<Vit>,
    pub gcn: Option<Gcn>,
    /// Projects CNN rows to the token width before attention.
    pub kv_proj: Linear,
    pub cross: Option<MultiHeadAttention>,
    /// `W_f`, `[(D + 64 + d_m) × 512]`, no bias.
    pub fusion: ParamId,
    pub classifier: Linear,
    pub risk_head: Linear,
}

impl FusionModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let cnn = Cnn::new(&mut params, "cnn", &config.cnn, rng)?;
        let vit = if config.use_vit {
            Some(Vit::new(&mut params, "vit", &config.vit, rng)?)
        } else {
            None
        };
        let gcn = if config.use_gnn {
            Some(Gcn::new(&mut params, "gcn", &config.gcn, rng)?)
        } else {
            None
        };
        let d = config.embed_dim();
        let kv_proj = Linear::new(&mut params, "fusion.kv_proj", config.cnn.output_channels, d, true, rng);
        let cross = if config.use_vit {
            Some(MultiHeadAttention::new(&mut params, "fusion.cross", d, config.cross_heads, rng)?)
        } else {
            None
        };
        let fin = config.fusion_input_dim();
        let fusion = params.add("fusion.w_f", fan_in_uniform(&[fin, FUSED_DIM], fin, 1.0, rng));
        let classifier = Linear::new(&mut params, "head.class", FUSED_DIM, NUM_GRADES, true, rng);
        let risk_head = Linear::new(&mut params, "head.risk", FUSED_DIM, 1, true, rng);
        let model = Self {
            config,
            params,
            cnn,
            vit,
            gcn,
            kv_proj,
            cross,
            fusion,
            classifier,
            risk_head,
        };
        debug_assert_eq!(model.param_count(), model.config.param_count());
        Ok(model)
    }

    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        let s = self.config.cnn.input_size;
        let expect = [s, s, self.config.cnn.in_channels];
        if input.image.shape() != expect {
            return Err(Error::dim(format!(
                "model expects a {expect:?} image, got {:?}",
                input.image.shape()
            )));
        }
        if input.meta.len() != self.config.meta_dim {
            return Err(Error::config(format!(
                "metadata has width {}, model expects {}",
                input.meta.len(),
                self.config.meta_dim
            )));
        }
        Ok(())
    }

    /// Encoders and fusion up to the `[1×512]` representation. `image` must hold `input.image`
    /// (it is a separate handle so saliency can differentiate with respect to it).
    /// Pixels in `[0, 1]` are recentred to `[-1, 1]` before both encoders.
    pub fn encode(&self, tape: &mut Tape, p: &Bindings, image: Var, input: &ModelInput) -> Result<Encoded> {
        self.check_input(input)?;
        let image = tape.affine(image, 2.0, -1.0);
        let cnn = self.cnn.forward(tape, p, image)?;
        let rows = flatten_cnn(tape, cnn)?;
        let (tokens, a0) = match (&self.vit, &self.cross) {
            (Some(vit), Some(cross)) => {
                let tokens = vit.forward(tape, p, image)?;
                let attended = cross_attend(tape, p, tokens, rows, &self.kv_proj, cross)?;
                (Some(tokens), tape.slice_rows(attended.output, 0, 1)?)
            }
            _ => {
                let kv = self.kv_proj.forward(tape, p, rows)?;
                (None, tape.mean_rows(kv)?)
            }
        };
        let graph = match &self.gcn {
            Some(g) => Some(g.forward(tape, p, &input.graph)?),
            None => None,
        };
        let meta = tape.constant(Tensor::row(input.meta.clone()));
        let fused = fuse(tape, a0, graph, meta, p.var(self.fusion))?;
        Ok(Encoded {
            cnn,
            tokens,
            graph,
            fused,
        })
    }

    /// Heads on a (possibly masked) fused row.
    pub fn heads(&self, tape: &mut Tape, p: &Bindings, fused: Var, mask: Option<Tensor>) -> Result<HeadOutput> {
        let f = match mask {
            Some(m) => tape.mul_const(fused, m)?,
            None => fused,
        };
        let logits = self.classifier.forward(tape, p, f)?;
        let probs = tape.softmax_rows(logits)?;
        let risk_logit = self.risk_head.forward(tape, p, f)?;
        let risk = tape.sigmoid(risk_logit);
        Ok(HeadOutput {
            logits,
            probs,
            risk_logit,
            risk,
        })
    }

    /// Full pass on `tape`; `Stochastic` draws a fresh dropout mask on the fused row.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bindings,
        input: &ModelInput,
        mode: DropoutMode,
        rng: &mut R,
    ) -> Result<HeadOutput> {
        let image = tape.constant(input.image.clone());
        let enc = self.encode(tape, p, image, input)?;
        let mask = dropout_mask(&[1, FUSED_DIM], self.config.dropout, mode, rng)?;
        self.heads(tape, p, enc.fused, mask)
    }

    /// Fused representation as a plain vector.
    pub fn fused_features(&self, input: &ModelInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let image = tape.constant(input.image.clone());
        let enc = self.encode(&mut tape, &p, image, input)?;
        Ok(tape.value(enc.fused).data().to_vec())
    }

    /// One head evaluation on a fused vector, with a fresh dropout mask when `dropout_on`.
    pub fn predict_heads<R: Rng + ?Sized>(&self, fused: &[f64], dropout_on: bool, rng: &mut R) -> Result<(Vec<f64>, f64)> {
        if fused.len() != FUSED_DIM {
            return Err(Error::dim(format!("fused vector has width {}, expected {FUSED_DIM}", fused.len())));
        }
        let mode = if dropout_on { DropoutMode::Stochastic } else { DropoutMode::Eval };
        match dropout_mask(&[1, FUSED_DIM], self.config.dropout, mode, rng)? {
            Some(m) => {
                let masked: Vec<f64> = fused.iter().zip(m.data()).map(|(a, b)| a * b).collect();
                Ok(self.head_pass(&masked))
            }
            None => Ok(self.head_pass(fused)),
        }
    }

    fn head_pass(&self, f: &[f64]) -> (Vec<f64>, f64) {
        let affine = |l: &Linear| -> Vec<f64> {
            let w = self.params.get(l.weight);
            let b = self.params.get(l.bias.expect("heads carry a bias"));
            (0..l.out_dim)
                .map(|j| b.data()[j] + f.iter().enumerate().map(|(i, x)| x * w.at(i, j)).sum::<f64>())
                .collect()
        };
        (softmax(&affine(&self.classifier)), sigmoid(affine(&self.risk_head)[0]))
    }

    pub fn predict_once<R: Rng + ?Sized>(&self, input: &ModelInput, dropout_on: bool, rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let fused = self.fused_features(input)?;
        self.predict_heads(&fused, dropout_on, rng)
    }

    /// `k` stochastic head passes over a single encoding.
    pub fn mc_predict<R: Rng + ?Sized>(&self, input: &ModelInput, k: usize, rng: &mut R) -> Result<McPrediction> {
        if k < 2 {
            return Err(Error::config(format!("MC dropout needs at least 2 samples, got {k}")));
        }
        let fused = self.fused_features(input)?;
        let mut probs = Vec::with_capacity(k);
        let mut risks = Vec::with_capacity(k);
        for _ in 0..k {
            let (p, r) = self.predict_heads(&fused, true, rng)?;
            probs.push(p);
            risks.push(r);
        }
        summarize_mc(&probs, &risks)
    }

    /// Single dropout-free pass without spread.
    pub fn predict_deterministic(&self, input: &ModelInput) -> Result<McPrediction> {
        let fused = self.fused_features(input)?;
        if fused.len() != FUSED_DIM {
            return Err(Error::dim("fused vector has the wrong width"));
        }
        let (p, r) = self.head_pass(&fused);
        McPrediction::deterministic(p, r)
    }

    /// Input-gradient saliency `[S×S]` of a class logit or the risk logit, dropout off.
    pub fn saliency(&self, input: &ModelInput, target: SaliencyTarget) -> Result<Tensor> {
        if let SaliencyTarget::Class(c) = target {
            if c >= NUM_GRADES {
                return Err(Error::contract(format!("class {c} out of range")));
            }
        }
        saliency_map(&input.image, |tape, image| {
            let p = self.params.bind(tape, false);
            let enc = self.encode(tape, &p, image, input)?;
            let h = self.heads(tape, &p, enc.fused, None)?;
            let score = match target {
                SaliencyTarget::Class(c) => tape.slice_cols(h.logits, c, 1)?,
                SaliencyTarget::Risk => h.risk_logit,
            };
            Ok(tape.sum(score))
        })
    }
}
