//! End-to-end forward pass: encode, estimate blur maps, propagate, attend,
//! decode.
//!
//! The encoder and decoder are small fixed stand-ins, two strided convs down
//! and two upsample convs back, and the output is a residual on the input.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bbfp::propagate;
use crate::blur_map::{normalize, unnormalized_blur, BlurMapSequence, FlowSequence};
use crate::bsst::{bsst_stack, MacTally, SparsityPlan};
use crate::config::ModelConfig;
use crate::error::{Error, Result, StageContext};
use crate::ops::{conv2d, leaky_relu, pad_reflect, upsample_nearest2x, PatchGrid};
use crate::tensor::Tensor;
use crate::weights::{DecoderWeights, EncoderWeights, NetworkWeights};

/// Spatial downsampling between frames and features.
pub const FEATURE_SCALE: usize = 4;

/// Frames `[T, H, W, 3]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    frames: Tensor,
}

impl VideoSequence {
    pub fn new(frames: Tensor) -> Result<Self> {
        frames.expect_rank("VideoSequence", 4)?;
        let s = frames.shape();
        if s[0] == 0 || s[1] == 0 || s[2] == 0 || s[3] != 3 {
            return Err(Error::shape(
                "VideoSequence",
                &[s[0].max(1), s[1], s[2], 3],
                s,
            ));
        }
        if let Some(v) = frames.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(
                "VideoSequence",
                format!("value {v} outside [0, 1]"),
            ));
        }
        Ok(VideoSequence { frames })
    }

    pub fn frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.frames
    }

    pub fn into_tensor(self) -> Tensor {
        self.frames
    }

    pub fn frame(&self, t: usize) -> Tensor {
        self.frames.slice_outer(t)
    }
}

fn lrelu_inplace(mut x: Tensor) -> Tensor {
    x.data_mut().iter_mut().for_each(|v| *v = leaky_relu(*v));
    x
}

/// `[T, H/4, W/4, C]` features.
pub fn encode(video: &VideoSequence, weights: &EncoderWeights) -> Result<Tensor> {
    let (h, w) = (video.height(), video.width());
    if h % FEATURE_SCALE != 0 || w % FEATURE_SCALE != 0 {
        return Err(Error::Geometry(format!(
            "frames are {h}x{w}; both sides must be multiples of {FEATURE_SCALE}"
        )));
    }
    let frames: Vec<Tensor> = video
        .frames
        .outer_slices()
        .map(|f| {
            let x = conv2d(&f, &weights.conv1_weight, Some(&weights.conv1_bias), 2, 1)?;
            let x = conv2d(
                &lrelu_inplace(x),
                &weights.conv2_weight,
                Some(&weights.conv2_bias),
                2,
                1,
            )?;
            Ok(lrelu_inplace(x))
        })
        .collect::<Result<_>>()?;
    Tensor::stack(&frames)
}

/// Restored video: `clamp(input + residual(features), 0, 1)`.
pub fn decode(
    features: &Tensor,
    video: &VideoSequence,
    weights: &DecoderWeights,
) -> Result<VideoSequence> {
    features.expect_rank("decode", 4)?;
    let s = features.shape();
    let (t, h, w) = (video.frames(), video.height(), video.width());
    if s[0] != t || s[1] * FEATURE_SCALE != h || s[2] * FEATURE_SCALE != w {
        return Err(Error::shape(
            "decode",
            &[t, h / FEATURE_SCALE, w / FEATURE_SCALE, s[3]],
            s,
        ));
    }
    let frames: Vec<Tensor> = features
        .outer_slices()
        .zip(video.frames.outer_slices())
        .map(|(f, input)| {
            let x = conv2d(
                &upsample_nearest2x(&f)?,
                &weights.conv1_weight,
                Some(&weights.conv1_bias),
                1,
                1,
            )?;
            let x = upsample_nearest2x(&lrelu_inplace(x))?;
            let residual = conv2d(&x, &weights.conv2_weight, Some(&weights.conv2_bias), 1, 1)?;
            let data = input
                .data()
                .iter()
                .zip(residual.data())
                .map(|(a, r)| (a + r).clamp(0.0, 1.0))
                .collect();
            Tensor::new(input.shape(), data)
        })
        .collect::<Result<_>>()?;
    VideoSequence::new(Tensor::stack(&frames)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub restored: VideoSequence,
    pub blur: BlurMapSequence,
    /// Exactly the plans the transformer layers used, one per layer.
    pub plans: Vec<SparsityPlan>,
    /// Attention-path MACs when counting was requested.
    pub tally: Option<MacTally>,
    pub timings: Vec<StageTiming>,
}

/// Rows and columns of reflect padding that bring a feature map to whole
/// attention windows on the token grid.
pub fn window_padding(height: usize, width: usize, config: &ModelConfig) -> (usize, usize) {
    let unit_h = config.stride * config.window[0];
    let unit_w = config.stride * config.window[1];
    (
        height.next_multiple_of(unit_h) - height,
        width.next_multiple_of(unit_w) - width,
    )
}

fn pad_frames(x: &Tensor, bottom: usize, right: usize) -> Result<Tensor> {
    if bottom == 0 && right == 0 {
        return Ok(x.clone());
    }
    let frames: Vec<Tensor> = x
        .outer_slices()
        .map(|f| pad_reflect(&f, bottom, right))
        .collect::<Result<_>>()?;
    Tensor::stack(&frames)
}

fn crop_frames(x: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let s = x.shape();
    if (s[1], s[2]) == (height, width) {
        return Ok(x.clone());
    }
    let c = s[3];
    let frames: Vec<Tensor> = x
        .outer_slices()
        .map(|f| {
            let src = f.data();
            let mut out = Vec::with_capacity(height * width * c);
            for y in 0..height {
                out.extend_from_slice(&src[(y * s[2]) * c..(y * s[2] + width) * c]);
            }
            Tensor::new([height, width, c], out)
        })
        .collect::<Result<_>>()?;
    Tensor::stack(&frames)
}

/// Blur maps of a clip whose flows are at feature resolution, reduced onto
/// the token grid of the window-padded features.
pub fn feature_blur_maps(flows: &FlowSequence, config: &ModelConfig) -> Result<BlurMapSequence> {
    let (fh, fw) = (flows.height(), flows.width());
    let (pad_h, pad_w) = window_padding(fh, fw, config);
    let grid = PatchGrid::new(fh + pad_h, fw + pad_w, config.patch, config.stride)?;
    let bhat = unnormalized_blur(flows);
    let (blur, sharp) = normalize(&bhat)?;
    BlurMapSequence::from_maps(bhat, blur, sharp, &grid, config.window)
}

/// Runs the whole network. `flows` must be at feature resolution
/// (`H/4 × W/4`). With `count` set, the transformer tallies its MACs.
pub fn forward(
    video: &VideoSequence,
    flows: &FlowSequence,
    config: &ModelConfig,
    weights: &NetworkWeights,
    count: bool,
) -> Result<ForwardOutput> {
    config.validate()?;
    let t_len = video.frames();
    let (fh, fw) = (
        video.height() / FEATURE_SCALE,
        video.width() / FEATURE_SCALE,
    );
    if flows.frames() != t_len || (flows.height(), flows.width()) != (fh, fw) {
        return Err(Error::Geometry(format!(
            "flows cover {} frames at {}x{}, expected {t_len} frames at {fh}x{fw}",
            flows.frames(),
            flows.height(),
            flows.width()
        )));
    }
    if weights.propagation.len() != config.branches || weights.transformer.len() != config.layers {
        return Err(Error::Config(format!(
            "weights have {} branches and {} layers, config wants {} and {}",
            weights.propagation.len(),
            weights.transformer.len(),
            config.branches,
            config.layers
        )));
    }

    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |stage: &str, timings: &mut Vec<StageTiming>| {
        timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: clock.elapsed().as_secs_f64(),
        });
        clock = Instant::now();
    };

    let features = encode(video, &weights.encoder).stage("encode")?;
    lap("encode", &mut timings);

    let maps = feature_blur_maps(flows, config).stage("blur_map")?;
    lap("blur_map", &mut timings);

    let per_frame: Vec<Tensor> = features.outer_slices().collect();
    let propagated =
        propagate(&per_frame, flows, &maps.sharp, &weights.propagation).stage("bbfp")?;
    lap("bbfp", &mut timings);

    let (pad_h, pad_w) = window_padding(fh, fw, config);
    let stack = (|| {
        let padded = pad_frames(&propagated, pad_h, pad_w)?;
        let out = bsst_stack(&padded, &maps, config, &weights.transformer, count)?;
        Ok((crop_frames(&out.features, fh, fw)?, out))
    })()
    .stage("bsst")?;
    let (refined, out) = stack;
    lap("bsst", &mut timings);

    let restored = decode(&refined, video, &weights.decoder).stage("decode")?;
    lap("decode", &mut timings);

    Ok(ForwardOutput {
        restored,
        blur: maps,
        plans: out.plans,
        tally: out.tally,
        timings,
    })
}
