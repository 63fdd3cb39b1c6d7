//! Subcommand implementations. Each returns a short JSON summary for stdout.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bsst_core::analysis::{analytic_flops, instrumented_flops, write_csv, FlopsReport};
use bsst_core::blur_map::{normalize, unnormalized_blur};
use bsst_core::bsst::{bsst_stack, layer_plan, LayerWeights};
use bsst_core::init::Initializer;
use bsst_core::ops::PatchGrid;
use bsst_core::pipeline::{feature_blur_maps, StageTiming, FEATURE_SCALE};
use bsst_core::synthetic::SyntheticFlowSpec;
use bsst_core::{
    forward, AttentionMode, BlurMapSequence, FlowSequence, ModelConfig, NetworkWeights, Tensor,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CliError, Result};
use crate::flows;
use crate::media::{self, FrameFormat};

pub const MANIFEST: &str = "manifest.json";
pub const SPARSITY: &str = "sparsity.json";

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(CliError::json(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::json(path))?;
    text.push('\n');
    fs::write(path, text).map_err(CliError::io(path))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

/// Reads a config file (missing fields take their defaults) and applies a
/// seed override.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ModelConfig> {
    let mut config = match path {
        Some(p) => read_json(p)?,
        None => ModelConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

pub fn cmd_synth(spec_path: &Path, out: &Path) -> Result<Value> {
    let spec: SyntheticFlowSpec = read_json(spec_path)?;
    let SyntheticFlowSpec::MovingBox(scene) = spec else {
        return Err(CliError::Usage(
            "synth renders frames only for moving_box specs".into(),
        ));
    };
    let frames = scene.render()?;
    let flows = scene.downscaled(FEATURE_SCALE)?.flows()?;

    let frame_dir = out.join("frames");
    create_dir(&frame_dir)?;
    (0..scene.frames).into_par_iter().try_for_each(|t| {
        let path = frame_dir.join(format!("frame_{t:04}.png"));
        media::write_frame(&path, &frames.slice_outer(t), FrameFormat::Png)
    })?;
    flows::write_dir(&out.join("flows"), &flows)?;
    Ok(json!({
        "frames": scene.frames,
        "image": [scene.height, scene.width],
        "flow": [flows.height(), flows.width()],
        "out": out,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FrameStats {
    pub frame: usize,
    pub min: f32,
    pub max: f32,
    pub mean: f32,
}

pub fn cmd_blurmap(flow_dir: Option<&Path>, synthetic: Option<&Path>, out: &Path) -> Result<Value> {
    let flows = match (flow_dir, synthetic) {
        (Some(dir), None) => flows::read_dir(dir, None)?,
        (None, Some(spec)) => read_json::<SyntheticFlowSpec>(spec)?.generate()?,
        _ => {
            return Err(CliError::Usage(
                "give exactly one of --flows or --synthetic".into(),
            ))
        }
    };
    let bhat = unnormalized_blur(&flows);
    let (blur, _) = normalize(&bhat)?;

    create_dir(out)?;
    (0..blur.outer()).into_par_iter().try_for_each(|t| {
        media::write_pgm(&out.join(format!("blur_{t:04}.pgm")), &blur.slice_outer(t))
    })?;
    let stats: Vec<FrameStats> = bhat
        .outer_slices()
        .enumerate()
        .map(|(frame, m)| {
            let d = m.data();
            FrameStats {
                frame,
                min: d.iter().copied().fold(f32::INFINITY, f32::min),
                max: d.iter().copied().fold(f32::NEG_INFINITY, f32::max),
                mean: (d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64) as f32,
            }
        })
        .collect();
    let summary = json!({
        "frames": flows.frames(),
        "height": flows.height(),
        "width": flows.width(),
        "unnormalized": stats,
    });
    write_json(&out.join("summary.json"), &summary)?;
    Ok(json!({ "frames": flows.frames(), "out": out }))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunInputs {
    pub config: Option<PathBuf>,
    pub frames: PathBuf,
    pub flows: PathBuf,
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    /// Full config with every default filled in; reruns use this, not the
    /// original file.
    pub config: ModelConfig,
    pub seed: u64,
    pub inputs: RunInputs,
    pub out: PathBuf,
    pub format: FrameFormat,
    pub timings: Vec<StageTiming>,
    pub outputs: Vec<String>,
}

pub struct RunRequest {
    pub config: ModelConfig,
    pub inputs: RunInputs,
    pub out: PathBuf,
    pub format: FrameFormat,
}

impl RunRequest {
    /// Rebuilds a request from a previous run's manifest; `out` overrides the
    /// recorded output directory.
    pub fn from_manifest(path: &Path, out: Option<PathBuf>) -> Result<Self> {
        let m: RunManifest = read_json(path)?;
        let mut config = m.config;
        config.seed = m.seed;
        Ok(RunRequest {
            config,
            inputs: m.inputs,
            out: out.unwrap_or(m.out),
            format: m.format,
        })
    }
}

pub fn cmd_run(req: &RunRequest) -> Result<RunManifest> {
    let config = &req.config;
    config.validate()?;
    let video = media::read_frames(&req.inputs.frames)?;
    let t_len = video.frames();
    let flows = if t_len == 1 {
        FlowSequence::zeros(
            1,
            video.height() / FEATURE_SCALE,
            video.width() / FEATURE_SCALE,
        )
    } else {
        flows::read_dir(&req.inputs.flows, Some(t_len))?
    };
    let weights = match &req.inputs.weights {
        Some(dir) => NetworkWeights::load(dir, config)?,
        None => NetworkWeights::seeded(config),
    };

    let result = forward(&video, &flows, config, &weights, false)?;

    create_dir(&req.out)?;
    let ext = req.format.extension();
    let outputs: Vec<String> = (0..t_len).map(|t| format!("frame_{t:04}.{ext}")).collect();
    outputs.par_iter().enumerate().try_for_each(|(t, name)| {
        media::write_frame(&req.out.join(name), &result.restored.frame(t), req.format)
    })?;
    write_json(&req.out.join(SPARSITY), &result.plans)?;

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        seed: config.seed,
        inputs: req.inputs.clone(),
        out: req.out.clone(),
        format: req.format,
        timings: result.timings,
        outputs: outputs.into_iter().chain([SPARSITY.to_string()]).collect(),
    };
    let path = req.out.join(MANIFEST);
    let tmp = req.out.join(format!("{MANIFEST}.tmp"));
    write_json(&tmp, &manifest)?;
    fs::rename(&tmp, &path).map_err(CliError::io(&path))?;
    Ok(manifest)
}

/// All-ones blur maps on a `tokens` grid: every window is selected.
fn fully_blurry(
    config: &ModelConfig,
    frames: usize,
    tokens: [usize; 2],
) -> Result<(BlurMapSequence, [usize; 2])> {
    let (h, w) = (tokens[0] * config.stride, tokens[1] * config.stride);
    let grid = PatchGrid::new(h, w, config.patch, config.stride)?;
    if [grid.rows, grid.cols] != tokens {
        return Err(CliError::Usage(format!(
            "{}x{} tokens are not reachable with patch {} stride {}",
            tokens[0], tokens[1], config.patch, config.stride
        )));
    }
    let maps = BlurMapSequence::from_blur(Tensor::full([frames, h, w], 1.0), &grid, config.window)?;
    Ok((maps, [h, w]))
}

/// Runs a small stack with counters on and checks it against the formula.
pub fn instrumented_report(
    config: &ModelConfig,
    frames: usize,
    tokens: [usize; 2],
    mode: AttentionMode,
) -> Result<FlopsReport> {
    let mut cfg = config.clone();
    cfg.attention = mode;
    let (maps, [h, w]) = fully_blurry(&cfg, frames, tokens)?;
    let mut init = Initializer::new(cfg.seed);
    let layers: Vec<LayerWeights> = (0..cfg.layers)
        .map(|_| LayerWeights::for_config(&mut init, &cfg))
        .collect();
    let features = init.range([frames, h, w, cfg.channels], -1.0, 1.0);
    let run = bsst_stack(&features, &maps, &cfg, &layers, true)?;
    let counted = instrumented_flops(&run, &cfg)?;
    let expected = analytic_flops(&cfg, frames, tokens, mode, counted.selected_windows)?;
    if counted.macs != expected.macs {
        return Err(CliError::Usage(format!(
            "instrumented MACs disagree with the closed form at T={frames} ({mode}): {:?} vs {:?}",
            counted.macs, expected.macs
        )));
    }
    Ok(counted)
}

pub struct FlopsRequest {
    pub config: ModelConfig,
    pub frames: Vec<usize>,
    pub modes: Vec<AttentionMode>,
    /// Token grid; defaults to a single window.
    pub tokens: Option<[usize; 2]>,
    pub instrumented: bool,
}

/// Sweep over fully blurry inputs (every window on the sparse path).
pub fn cmd_flops(req: &FlopsRequest, out: &mut impl Write) -> Result<Vec<FlopsReport>> {
    let tokens = req.tokens.unwrap_or(req.config.window);
    let [h, w] = req.config.window;
    let all_windows = (tokens[0] / h.max(1)) * (tokens[1] / w.max(1));
    let mut reports = Vec::new();
    for &mode in &req.modes {
        for &t in &req.frames {
            reports.push(analytic_flops(&req.config, t, tokens, mode, all_windows)?);
        }
    }
    let io = |e| CliError::io(Path::new("<flops output>"))(e);
    write_csv(out, &reports).map_err(io)?;
    if req.instrumented {
        for &mode in &req.modes {
            for &t in &req.frames {
                let r = instrumented_report(&req.config, t, tokens, mode)?;
                for (stage, macs) in r.stages() {
                    writeln!(out, "{t},{mode}-instrumented,{stage},{macs}").map_err(io)?;
                }
            }
        }
    }
    Ok(reports)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer: usize,
    pub selected_windows: usize,
    pub windows: usize,
    pub query_tokens: usize,
    pub total_query_tokens: usize,
    pub query_fraction: f64,
}

pub fn cmd_sparsity_stats(config: &ModelConfig, flow_dir: &Path) -> Result<Value> {
    let flows = flows::read_dir(flow_dir, None)?;
    let maps = feature_blur_maps(&flows, config)?;
    let [h, w] = config.window;
    let t = flows.frames();
    let mut layers = Vec::new();
    let mut plans = Vec::new();
    for layer in 0..config.layers {
        let plan = layer_plan(&maps, config, layer)?;
        let windows = plan.mask.rows * plan.mask.cols;
        let query_tokens = plan.sparse_query_tokens(config.window)
            + (windows - plan.selected_windows()) * t * h * w;
        let total = windows * t * h * w;
        layers.push(LayerStats {
            layer,
            selected_windows: plan.selected_windows(),
            windows,
            query_tokens,
            total_query_tokens: total,
            query_fraction: query_tokens as f64 / total as f64,
        });
        plans.push(plan);
    }
    Ok(
        json!({ "frames": t, "tokens": [maps.grid.rows, maps.grid.cols], "layers": layers, "plans": plans }),
    )
}
