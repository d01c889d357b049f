//! The array of `k + 1` graph autoencoder branches.
//!
//! Each branch is an encoder (graph transformer, then graph attention) and a
//! mirrored decoder. Branch 0 produces the aging term, branches `1..=k` the
//! fluctuation terms. Branches share the input and the graph but nothing else.

mod branch;
mod checkpoint;
mod ops;
mod params;

pub use branch::{
    branch_backward, branch_forward, branch_forward_cached, branch_forward_windowed, model_forward,
    padded_slice, slice_ranges, stage_backward, stage_forward, BranchCache, Decomposition, LayerCache,
    LayerSettings, Stage,
};
pub use checkpoint::{CheckpointMeta, TrainedModel, FORMAT_VERSION};
pub use ops::{
    attention_backward, attention_forward, attention_row_sums, gat_conv, transformer_backward,
    transformer_conv, transformer_forward, Activation, AttentionCache, TransformerCache,
};
pub use params::{
    init_branch, init_params, AttentionLayerParams, BranchParams, ModelConfig,
    TransformerLayerParams, TENSOR_NAMES,
};
