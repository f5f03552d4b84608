//! A small deterministic tensor/layer engine.
//!
//! There is no general autodiff here: each layer pairs a forward pass with a
//! hand-derived backward pass, and models wire them together explicitly.
//! Everything is generic over [`Scalar`], so the same model runs in f32 for
//! training throughput and in f64 for finite-difference gradient checks.

mod layers;
mod optim;
mod params;
mod tensor;

pub use layers::{
    cross_entropy_from_probs, dropout, dropout_backward, effective_groups, global_avg_pool,
    global_avg_pool_backward, maxpool3d, maxpool3d_backward, relu, relu_backward, silu,
    silu_backward, softmax_rows, upsample_nearest2x, upsample_nearest2x_backward, AttnCache,
    Conv3d, GnCache, GroupNorm, Linear, MaxPoolCache, SelfAttention,
};
pub use optim::Adam;
pub use params::{
    grad_get, load_params, param_add, param_count, param_get, save_params, zero_grads,
    TensorEntry, Visit,
};
pub use tensor::{concat_channels, split_channels, Scalar, Tensor};
