//! Blur-aware sparse spatio-temporal transformer.

pub mod layer;
pub mod plan;
pub mod stack;

pub use layer::{
    attention_stage, ffn_stage, global_tokens, sparse_attention, LayerWeights, MacTally,
    WindowGeometry,
};
pub use plan::{
    build_plan, select_kv_frames, select_query_frames, spatial_mask, SparsityPlan, WindowMask,
    WindowPlan,
};
pub use stack::{bsst_stack, detokenize, layer_plan, tokenize, StackOutput};
