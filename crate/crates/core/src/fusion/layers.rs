use crate::error::{Error, Result};
use crate::numerics::{AttentionOutput, Bindings, Linear, MultiHeadAttention, Tape, Var};

/// `[G×G×C]` feature map to `[G²×C]` rows; row `g·G + h` is cell `(g, h)`.
pub fn flatten_cnn(tape: &mut Tape, features: Var) -> Result<Var> {
    match *tape.value(features).shape() {
        [g, h, c] => tape.reshape(features, &[g * h, c]),
        ref s => Err(Error::dim(format!("CNN features must be G×G×C, got {s:?}"))),
    }
}

/// ViT tokens attend over the CNN rows after projecting them to the token width.
/// No residual is added around the attention.
pub fn cross_attend(
    tape: &mut Tape,
    params: &Bindings,
    tokens: Var,
    cnn_rows: Var,
    kv_proj: &Linear,
    attn: &MultiHeadAttention,
) -> Result<AttentionOutput> {
    let c = tape.value(cnn_rows).cols();
    let d = tape.value(tokens).cols();
    if c != kv_proj.in_dim || d != kv_proj.out_dim || attn.q.in_dim != d {
        return Err(Error::config(format!(
            "cross-attention configured for {}→{} keys and width {}, got CNN width {c} and token width {d}",
            kv_proj.in_dim, kv_proj.out_dim, attn.q.in_dim
        )));
    }
    let kv = kv_proj.forward(tape, params, cnn_rows)?;
    attn.forward(tape, params, tokens, kv, kv)
}

/// `Concat[a0, f_gnn?, meta] · W_f`. `a0`, `f_gnn` and `meta` are single rows.
pub fn fuse(tape: &mut Tape, a0: Var, f_gnn: Option<Var>, meta: Var, w_f: Var) -> Result<Var> {
    let mut parts = vec![a0];
    parts.extend(f_gnn);
    parts.push(meta);
    let width: usize = parts.iter().map(|&p| tape.value(p).numel()).sum();
    if parts.iter().any(|&p| tape.value(p).shape().first() != Some(&1)) || width != tape.value(w_f).rows() {
        return Err(Error::config(format!(
            "fusion inputs total {width} wide, W_f expects {}",
            tape.value(w_f).rows()
        )));
    }
    let cat = tape.concat_cols(&parts)?;
    tape.matmul(cat, w_f)
}
