//! Model hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which frame numbers a layer may draw keys/values from. Frames are
/// numbered from 1, so `Odd` admits 0-based indices 0, 2, 4, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Odd,
    Even,
    Off,
}

impl Parity {
    /// Whether the 0-based frame `index` is eligible under this parity.
    pub fn admits(self, index: usize) -> bool {
        match self {
            Parity::Off => true,
            Parity::Odd => index.is_multiple_of(2),
            Parity::Even => index % 2 == 1,
        }
    }

    pub fn eligible_count(self, frames: usize) -> usize {
        match self {
            Parity::Off => frames,
            Parity::Odd => frames.div_ceil(2),
            Parity::Even => frames / 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParitySchedule {
    /// Layer 1 odd, layer 2 even, ...
    Alternate,
    Off,
}

impl ParitySchedule {
    /// Parity of the 0-based `layer`.
    pub fn for_layer(self, layer: usize) -> Parity {
        match self {
            ParitySchedule::Off => Parity::Off,
            ParitySchedule::Alternate if layer.is_multiple_of(2) => Parity::Odd,
            ParitySchedule::Alternate => Parity::Even,
        }
    }
}

/// `Sparse` runs blur-guided selection; `Dense` sends every window through
/// standard spatio-temporal window attention over all frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Dense,
    Sparse,
}

impl std::fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttentionMode::Dense => "dense",
            AttentionMode::Sparse => "sparse",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Soft-split patch size `p`.
    pub patch: usize,
    /// Soft-split stride `s`.
    pub stride: usize,
    /// Attention window `(h, w)` in tokens.
    pub window: [usize; 2],
    /// Pooled global token grid `(h_p, w_p)`.
    pub pooled: [usize; 2],
    /// Blur threshold θ for the spatial window mask.
    pub theta: f32,
    pub k_q: usize,
    pub k_kv: usize,
    /// Feature channels `C`.
    pub channels: usize,
    /// Propagation branches `J`.
    pub branches: usize,
    /// Transformer layers `L`.
    pub layers: usize,
    pub heads: usize,
    /// FFN hidden width as a multiple of the token width.
    pub ffn_ratio: usize,
    pub parity: ParitySchedule,
    pub attention: AttentionMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            patch: 4,
            stride: 2,
            window: [4, 4],
            pooled: [2, 2],
            theta: 0.3,
            k_q: 24,
            k_kv: 24,
            channels: 32,
            branches: 2,
            layers: 4,
            heads: 4,
            ffn_ratio: 2,
            parity: ParitySchedule::Alternate,
            attention: AttentionMode::Sparse,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Token width `C_z = p²·C`.
    pub fn token_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.token_dim() / self.heads
    }

    pub fn ffn_hidden(&self) -> usize {
        self.ffn_ratio * self.token_dim()
    }

    /// Key/value tokens per window per frame, `(h + h_p)(w + w_p)`.
    pub fn kv_tokens_per_frame(&self) -> usize {
        (self.window[0] + self.pooled[0]) * (self.window[1] + self.pooled[1])
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("patch", self.patch),
            ("stride", self.stride),
            ("window.h", self.window[0]),
            ("window.w", self.window[1]),
            ("pooled.h", self.pooled[0]),
            ("pooled.w", self.pooled[1]),
            ("k_q", self.k_q),
            ("k_kv", self.k_kv),
            ("channels", self.channels),
            ("branches", self.branches),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ffn_ratio", self.ffn_ratio),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.patch < self.stride {
            return Err(Error::Config(format!(
                "patch {} must be at least stride {}",
                self.patch, self.stride
            )));
        }
        if !(self.theta.is_finite() && self.theta >= 0.0) {
            return Err(Error::Config(format!(
                "theta must be finite and >= 0, got {}",
                self.theta
            )));
        }
        if !self.token_dim().is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "token width {} not divisible by {} heads",
                self.token_dim(),
                self.heads
            )));
        }
        Ok(())
    }
}
