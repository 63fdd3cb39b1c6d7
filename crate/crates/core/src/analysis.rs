//! Multiply-accumulate accounting for the transformer, in closed form and as
//! counted during a real run. Counts are MACs; one MAC is two FLOPs.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bsst::layer::POOL_KERNEL;
use crate::bsst::{MacTally, SparsityPlan, StackOutput};
use crate::config::{AttentionMode, ModelConfig, Parity};
use crate::error::{Error, Result};
use crate::pipeline::ForwardOutput;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub frames: usize,
    pub mode: AttentionMode,
    /// Token grid `M × N`.
    pub tokens: [usize; 2],
    /// Windows on the sparse path in each layer.
    pub selected_windows: usize,
    pub macs: MacTally,
    pub config: ModelConfig,
}

impl FlopsReport {
    /// `(stage, MACs)` rows, ending with the total.
    pub fn stages(&self) -> Vec<(&'static str, u64)> {
        let m = &self.macs;
        vec![
            ("qkv_projection", m.qkv_projection),
            ("global_tokens", m.global_tokens),
            ("qk_logits", m.qk_logits),
            ("attention_values", m.attention_values),
            ("output_projection", m.output_projection),
            ("ffn", m.ffn),
            ("total", m.total()),
        ]
    }

    pub fn flops(&self) -> u64 {
        2 * self.macs.total()
    }
}

/// Key/value frames a sparse window of `layer` actually gets.
fn kv_frames(config: &ModelConfig, frames: usize, layer: usize) -> usize {
    let parity = config.parity.for_layer(layer);
    let eligible = match parity.eligible_count(frames) {
        0 => Parity::Off.eligible_count(frames),
        n => n,
    };
    config.k_kv.min(eligible)
}

/// Closed-form MACs of the transformer stack for `frames` frames on an
/// `M × N` token grid with `selected_windows` windows on the sparse path in
/// every layer (ignored in dense mode).
pub fn analytic_flops(
    config: &ModelConfig,
    frames: usize,
    tokens: [usize; 2],
    mode: AttentionMode,
    selected_windows: usize,
) -> Result<FlopsReport> {
    config.validate()?;
    let [mm, nn] = tokens;
    let [h, w] = config.window;
    if mm % h != 0 || nn % w != 0 {
        return Err(Error::Geometry(format!(
            "{mm}x{nn} tokens do not tile into {h}x{w} windows"
        )));
    }
    let windows = (mm / h) * (nn / w);
    let selected = match mode {
        AttentionMode::Dense => 0,
        AttentionMode::Sparse if selected_windows > windows => {
            return Err(Error::invalid(
                "analytic_flops",
                format!("{selected_windows} selected windows out of {windows}"),
            ))
        }
        AttentionMode::Sparse => selected_windows,
    };

    let t = frames as u64;
    let cz = config.token_dim() as u64;
    let hidden = config.ffn_hidden() as u64;
    let per_window = (h * w) as u64;
    let kv_per_frame = config.kv_tokens_per_frame() as u64;
    let all_tokens = t * (mm * nn) as u64;
    let pooled = t * (config.pooled[0] * config.pooled[1]) as u64;
    let k_q = config.k_q.min(frames) as u64;
    let dense_windows = (windows - selected) as u64;
    let selected = selected as u64;

    let mut macs = MacTally::default();
    for layer in 0..config.layers {
        let k_kv = kv_frames(config, frames, layer) as u64;
        let (sq, sk) = (k_q * per_window, k_kv * kv_per_frame);
        let (dq, dk) = (t * per_window, t * kv_per_frame);
        let pairs = selected * sq * sk + dense_windows * dq * dk;
        let queries = selected * sq + dense_windows * dq;
        macs += MacTally {
            qkv_projection: 3 * all_tokens * cz * cz,
            global_tokens: pooled * (POOL_KERNEL * POOL_KERNEL) as u64 * cz + 2 * pooled * cz * cz,
            qk_logits: pairs * cz,
            attention_values: pairs * cz,
            output_projection: queries * cz * cz,
            ffn: 2 * all_tokens * cz * hidden,
            sparse_query_tokens: selected * sq,
            dense_query_tokens: dense_windows * dq,
        };
    }
    Ok(FlopsReport {
        frames,
        mode,
        tokens,
        selected_windows: selected as usize,
        macs,
        config: config.clone(),
    })
}

/// A finished run that may carry MAC counters.
pub trait CountedRun {
    fn tally(&self) -> Option<MacTally>;
    fn plans(&self) -> &[SparsityPlan];
    fn tokens(&self) -> [usize; 2];
}

impl CountedRun for StackOutput {
    fn tally(&self) -> Option<MacTally> {
        self.tally
    }

    fn plans(&self) -> &[SparsityPlan] {
        &self.plans
    }

    fn tokens(&self) -> [usize; 2] {
        self.tokens
    }
}

impl CountedRun for ForwardOutput {
    fn tally(&self) -> Option<MacTally> {
        self.tally
    }

    fn plans(&self) -> &[SparsityPlan] {
        &self.plans
    }

    fn tokens(&self) -> [usize; 2] {
        [self.blur.grid.rows, self.blur.grid.cols]
    }
}

/// Report built from the counters of a run executed with counting on.
pub fn instrumented_flops(run: &impl CountedRun, config: &ModelConfig) -> Result<FlopsReport> {
    let macs = run.tally().ok_or(Error::CountingDisabled)?;
    let first = run
        .plans()
        .first()
        .ok_or_else(|| Error::invalid("instrumented_flops", "run has no layers"))?;
    Ok(FlopsReport {
        frames: first.frames,
        mode: first.mode,
        tokens: run.tokens(),
        selected_windows: first.selected_windows(),
        macs,
        config: config.clone(),
    })
}

pub const CSV_HEADER: &str = "T,mode,stage,macs";

/// One row per stage of every report, after a header row.
pub fn write_csv(out: &mut impl Write, reports: &[FlopsReport]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in reports {
        for (stage, macs) in r.stages() {
            writeln!(out, "{},{},{stage},{macs}", r.frames, r.mode)?;
        }
    }
    Ok(())
}

/// Convolution MACs of the stages around the transformer, for frames of
/// `H × W`. Warps and elementwise work are not counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkMacs {
    pub encoder: u64,
    pub propagation: u64,
    pub decoder: u64,
}

pub fn network_macs(
    config: &ModelConfig,
    frames: usize,
    height: usize,
    width: usize,
) -> NetworkMacs {
    let c = config.channels as u64;
    let t = frames as u64;
    let (h, w) = (height as u64, width as u64);
    let half = (h / 2) * (w / 2);
    let quarter = (h / 4) * (w / 4);
    let encoder = t * (half * c * 27 + quarter * c * 9 * c);
    let bfa = quarter * (54 * (3 * c + 6) * 9 + 2 * (c * 2 * c * 9));
    let propagation = t * config.branches as u64 * bfa;
    let decoder = t * (half * c * 9 * c + h * w * 3 * 9 * c);
    NetworkMacs {
        encoder,
        propagation,
        decoder,
    }
}
