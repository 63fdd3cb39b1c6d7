//! Forward pass of a blur-aware spatio-temporal sparse transformer for video
//! deblurring: optical-flow blur maps, bidirectional blur-aware feature
//! propagation, and window attention that spends compute only on blurry
//! regions and draws keys from sharp frames.

pub mod analysis;
pub mod bbfp;
pub mod blur_map;
pub mod bsst;
pub mod config;
pub mod error;
pub mod init;
pub mod ops;
pub mod pipeline;
pub mod synthetic;
pub mod tensor;
pub mod weights;

pub use blur_map::{BlurMapSequence, FlowSequence};
pub use config::{AttentionMode, ModelConfig, Parity, ParitySchedule};
pub use error::{Error, Result};
pub use pipeline::{forward, ForwardOutput, VideoSequence};
pub use tensor::{Flow, Tensor};
pub use weights::NetworkWeights;
