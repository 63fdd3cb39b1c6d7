//! Dense numerical kernels shared by the propagation and attention stages.
//!
//! Everything here is a pure function of its inputs. Feature maps are laid
//! out `[H, W, C]`; convolution weights follow the usual
//! `[C_out, C_in, k, k]` order.

mod conv;
mod dense;
mod patch;
mod pool;
mod sample;

pub use conv::{conv2d, deform_conv2d, depthwise_conv2d, upsample_nearest2x};
pub use dense::{
    dot, gelu, layer_norm, leaky_relu, linear, matmul_nt, sigmoid, softmax_in_place, softmax_rows,
};
pub use patch::{pad_reflect, reflect_index, soft_composition, soft_split, PatchGrid};
pub use pool::{avg_pool2d, max_pool2d, pool_on_grid, PoolKind};
pub use sample::{backward_warp, bilinear_sample};

pub(crate) use sample::BilinearTaps;
