use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{linear_forward, Bindings, Linear, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Projection handles for one attention call.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `[Nq × Dm]` projected output.
    pub output: Var,
    /// Per-head `[Nq × Nk]` attention weights; every row sums to one.
    pub weights: Vec<Var>,
}

/// Scaled dot-product attention over `heads` column blocks of width `Dm/heads`,
/// concatenated and passed through the output projection.
pub fn multi_head_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    p: &AttentionVars,
) -> Result<AttentionOutput> {
    let dm = tape.value(p.wq).shape()[1];
    if heads == 0 || !dm.is_multiple_of(heads) {
        return Err(Error::config(format!(
            "model width {dm} is not divisible by {heads} heads"
        )));
    }
    if tape.value(k).shape()[0] != tape.value(v).shape()[0] {
        return Err(Error::dim("keys and values must have the same row count"));
    }
    let dh = dm / heads;
    let qp = linear_forward(tape, q, p.wq, Some(p.bq))?;
    let kp = linear_forward(tape, k, p.wk, Some(p.bk))?;
    let vp = linear_forward(tape, v, p.wv, Some(p.bv))?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (qp, kp, vp)
        } else {
            (
                tape.slice_cols(qp, h * dh, dh)?,
                tape.slice_cols(kp, h * dh, dh)?,
                tape.slice_cols(vp, h * dh, dh)?,
            )
        };
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scores)?;
        outs.push(tape.matmul(attn, vh)?);
        weights.push(attn);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let output = linear_forward(tape, cat, p.wo, Some(p.bo))?;
    Ok(AttentionOutput { output, weights })
}

/// Learnable multi-head attention block with `[Dq×Dm]`, `[Dk×Dm]`, `[Dk×Dm]`
/// input projections and a `[Dm×Dm]` output projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::config(format!(
                "model width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, true, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, true, rng),
            heads,
        })
    }

    pub fn param_count(dim: usize) -> usize {
        4 * Linear::param_count(dim, dim, true)
    }

    pub fn vars(&self, params: &Bindings) -> AttentionVars {
        let b = |l: &Linear| params.var(l.bias.expect("attention projections carry a bias"));
        AttentionVars {
            wq: params.var(self.q.weight),
            bq: b(&self.q),
            wk: params.var(self.k.weight),
            bk: b(&self.k),
            wv: params.var(self.v.weight),
            bv: b(&self.v),
            wo: params.var(self.o.weight),
            bo: b(&self.o),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        q: Var,
        k: Var,
        v: Var,
    ) -> Result<AttentionOutput> {
        multi_head_attention(tape, q, k, v, self.heads, &self.vars(params))
    }
}
