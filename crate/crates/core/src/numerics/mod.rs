//! Dense tensors, reverse-mode differentiation and the layer primitives the
//! models are assembled from.

mod adam;
mod attention;
mod dropout;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState, OptimConfig};
pub use attention::{multi_head_attention, AttentionOutput, AttentionVars, MultiHeadAttention};
pub use dropout::{dropout, dropout_mask, dropout_tensor, DropoutMode};
pub use gradcheck::{
    grad_check, grad_check_params, relative_error, Coordinates, ParamCheckReport, TensorCheck, REL_ERR_FLOOR,
};
pub use params::{
    fan_in_uniform, linear_forward, normal_init, Bindings, LayerNorm, Linear, ParamEntry, ParamId,
    ParamStore,
};
pub use tape::{conv_out_dims, sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Softmax of a plain slice (max-shifted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut v = logits.to_vec();
    tape::softmax_in_place(&mut v);
    v
}
