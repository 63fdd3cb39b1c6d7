//! Blur-aware bidirectional feature propagation.
//!
//! Each branch walks the clip in one direction. At every step the current
//! feature (from the previous branch) is fused with the branch's own outputs
//! one and two steps back, aligned by a modulated deformable convolution
//! whose sampling offsets are residual to the optical flow and whose
//! modulation mask is lifted by the neighbours' sharp maps. Sharp pixels
//! always propagate; blurry ones only if the learned mask admits them.

use crate::blur_map::FlowSequence;
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::ops::{backward_warp, conv2d, deform_conv2d, sigmoid};
use crate::tensor::{Flow, Tensor};

/// Kernel size of every convolution in the alignment block.
pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;
/// One deformable group per neighbour frame.
const GROUPS: usize = 2;
/// Offset-generator output: `(dy, dx)` per tap per group, then one mask
/// logit per tap per group.
pub const OFFSET_CHANNELS: usize = 3 * TAPS * GROUPS;
/// Index of the first mask logit in the offset-generator output.
pub const MASK_LOGIT_START: usize = 2 * TAPS * GROUPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Weights of one alignment block for `C` feature channels.
#[derive(Debug, Clone, PartialEq)]
pub struct BfaWeights {
    /// `[OFFSET_CHANNELS, 3C + 6, 3, 3]` over the concatenation
    /// `[current, warped1, warped2, flow1, flow2, sharp1, sharp2]`.
    pub offset_weight: Tensor,
    pub offset_bias: Tensor,
    /// `[C, 2C, 3, 3]` over `[prev1, prev2]`, two deformable groups.
    pub dcn_weight: Tensor,
    /// `[C, 2C, 3, 3]` over `[current, aligned]`.
    pub fusion_weight: Tensor,
    pub fusion_bias: Tensor,
}

impl BfaWeights {
    pub fn zeros(channels: usize) -> Self {
        let c = channels;
        BfaWeights {
            offset_weight: Tensor::zeros([OFFSET_CHANNELS, 3 * c + 6, KERNEL, KERNEL]),
            offset_bias: Tensor::zeros([OFFSET_CHANNELS]),
            dcn_weight: Tensor::zeros([c, 2 * c, KERNEL, KERNEL]),
            fusion_weight: Tensor::zeros([c, 2 * c, KERNEL, KERNEL]),
            fusion_bias: Tensor::zeros([c]),
        }
    }

    pub fn seeded(init: &mut Initializer, channels: usize) -> Self {
        let c = channels;
        let offset_fan = (3 * c + 6) * TAPS;
        let pair_fan = 2 * c * TAPS;
        BfaWeights {
            offset_weight: init.uniform([OFFSET_CHANNELS, 3 * c + 6, KERNEL, KERNEL], offset_fan),
            offset_bias: init.uniform([OFFSET_CHANNELS], offset_fan),
            dcn_weight: init.uniform([c, 2 * c, KERNEL, KERNEL], pair_fan),
            fusion_weight: init.uniform([c, 2 * c, KERNEL, KERNEL], pair_fan),
            fusion_bias: init.uniform([c], pair_fan),
        }
    }

    pub fn channels(&self) -> usize {
        self.fusion_bias.len()
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("offset_weight", &self.offset_weight),
            ("offset_bias", &self.offset_bias),
            ("dcn_weight", &self.dcn_weight),
            ("fusion_weight", &self.fusion_weight),
            ("fusion_bias", &self.fusion_bias),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("offset_weight", &mut self.offset_weight),
            ("offset_bias", &mut self.offset_bias),
            ("dcn_weight", &mut self.dcn_weight),
            ("fusion_weight", &mut self.fusion_weight),
            ("fusion_bias", &mut self.fusion_bias),
        ]
    }
}

/// Everything one alignment step consumes, all at feature resolution.
#[derive(Debug, Clone, Copy)]
pub struct BfaInputs<'a> {
    /// Feature of the current step from the previous branch, `[H, W, C]`.
    pub current: &'a Tensor,
    /// This branch's output one step back.
    pub prev1: &'a Tensor,
    /// This branch's output two steps back.
    pub prev2: &'a Tensor,
    pub warped1: &'a Tensor,
    pub warped2: &'a Tensor,
    /// Flow from the current frame to the frame one step back.
    pub flow1: &'a Flow,
    pub flow2: &'a Flow,
    /// Sharp map of the frame one step back, `[H, W]`.
    pub sharp1: &'a Tensor,
    pub sharp2: &'a Tensor,
}

/// `O(t → t-2) = O(t → t-1) + W(O(t-1 → t-2), O(t → t-1))`.
pub fn compose_flow(to_prev: &Flow, prev_to_prev2: &Flow) -> Result<Flow> {
    let warped = backward_warp(prev_to_prev2.as_tensor(), to_prev)?;
    let data = to_prev
        .as_tensor()
        .data()
        .iter()
        .zip(warped.data())
        .map(|(a, b)| a + b)
        .collect();
    Flow::new(Tensor::new(to_prev.as_tensor().shape(), data)?)
}

/// Concatenates `[H, W, C_i]` tensors along the channel axis. Rank-2 inputs
/// count as one channel.
fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let (h, w) = (parts[0].shape()[0], parts[0].shape()[1]);
    let chans: Vec<usize> = parts
        .iter()
        .map(|p| match p.rank() {
            2 => Ok(1),
            3 => Ok(p.shape()[2]),
            _ => Err(Error::invalid(
                "concat_channels",
                format!("bad rank {:?}", p.shape()),
            )),
        })
        .collect::<Result<_>>()?;
    for p in parts {
        if p.shape()[0] != h || p.shape()[1] != w {
            return Err(Error::shape("concat_channels", &[h, w], &p.shape()[..2]));
        }
    }
    let total: usize = chans.iter().sum();
    let mut out = Vec::with_capacity(h * w * total);
    for pix in 0..h * w {
        for (p, &c) in parts.iter().zip(&chans) {
            out.extend_from_slice(&p.data()[pix * c..(pix + 1) * c]);
        }
    }
    Tensor::new([h, w, total], out)
}

/// One blur-aware alignment step.
///
/// 1. concatenate `[current, warped1, warped2, flow1, flow2, sharp1, sharp2]`;
/// 2. a 3×3 conv predicts offset residuals and mask logits per neighbour;
/// 3. mask = clamp(sigmoid(logit) + sharp, 0, 1), offset = flow + residual;
/// 4. deformable conv aligns `[prev1, prev2]`;
/// 5. a 3×3 conv fuses `[current, aligned]`, added to `current`.
pub fn bfa(inputs: &BfaInputs<'_>, weights: &BfaWeights) -> Result<Tensor> {
    let (h, w, c) = inputs.current.dims3("bfa")?;
    if weights.channels() != c {
        return Err(Error::shape("bfa", &[weights.channels()], &[c]));
    }
    for t in [inputs.prev1, inputs.prev2, inputs.warped1, inputs.warped2] {
        if t.shape() != [h, w, c] {
            return Err(Error::shape("bfa", &[h, w, c], t.shape()));
        }
    }
    for s in [inputs.sharp1, inputs.sharp2] {
        if s.shape() != [h, w] {
            return Err(Error::shape("bfa", &[h, w], s.shape()));
        }
    }
    let cond = concat_channels(&[
        inputs.current,
        inputs.warped1,
        inputs.warped2,
        inputs.flow1.as_tensor(),
        inputs.flow2.as_tensor(),
        inputs.sharp1,
        inputs.sharp2,
    ])?;
    let raw = conv2d(
        &cond,
        &weights.offset_weight,
        Some(&weights.offset_bias),
        1,
        KERNEL / 2,
    )?;

    let mut offsets = vec![0.0f32; h * w * 2 * TAPS * GROUPS];
    let mut mask = vec![0.0f32; h * w * TAPS * GROUPS];
    let flows = [inputs.flow1, inputs.flow2];
    let sharps = [inputs.sharp1.data(), inputs.sharp2.data()];
    for pix in 0..h * w {
        let r = &raw.data()[pix * OFFSET_CHANNELS..(pix + 1) * OFFSET_CHANNELS];
        for g in 0..GROUPS {
            let (u, v) = flows[g].at(pix / w, pix % w);
            for tap in 0..TAPS {
                let o = g * TAPS + tap;
                offsets[(pix * GROUPS * TAPS + o) * 2] = r[2 * o] + v;
                offsets[(pix * GROUPS * TAPS + o) * 2 + 1] = r[2 * o + 1] + u;
                mask[pix * GROUPS * TAPS + o] =
                    (sigmoid(r[MASK_LOGIT_START + o]) + sharps[g][pix]).clamp(0.0, 1.0);
            }
        }
    }
    let offsets = Tensor::new([h, w, 2 * TAPS * GROUPS], offsets)?;
    let mask = Tensor::new([h, w, TAPS * GROUPS], mask)?;
    let neighbours = concat_channels(&[inputs.prev1, inputs.prev2])?;
    let aligned = deform_conv2d(&neighbours, &offsets, &mask, &weights.dcn_weight, GROUPS)?;

    let fused_in = concat_channels(&[inputs.current, &aligned])?;
    let fused = conv2d(
        &fused_in,
        &weights.fusion_weight,
        Some(&weights.fusion_bias),
        1,
        KERNEL / 2,
    )?;
    let out = inputs
        .current
        .data()
        .iter()
        .zip(fused.data())
        .map(|(a, b)| a + b)
        .collect();
    Tensor::new([h, w, c], out)
}

/// Runs one propagation branch over the clip.
///
/// `input[t]` is the previous branch's feature at frame `t`; the returned
/// vector is indexed by frame, not by traversal order. Missing neighbours at
/// the start of the traversal are zero features with zero flow and zero
/// sharpness.
pub fn propagate_branch(
    input: &[Tensor],
    flows: &FlowSequence,
    sharp: &Tensor,
    direction: Direction,
    weights: &BfaWeights,
) -> Result<Vec<Tensor>> {
    let t_len = input.len();
    if t_len == 0 {
        return Err(Error::invalid("propagate", "need at least one frame"));
    }
    let (h, w, c) = input[0].dims3("propagate")?;
    if flows.frames() != t_len || flows.height() != h || flows.width() != w {
        return Err(Error::Geometry(format!(
            "flows cover {} frames of {}x{}, features are {t_len} frames of {h}x{w}",
            flows.frames(),
            flows.height(),
            flows.width()
        )));
    }
    if sharp.shape() != [t_len, h, w] {
        return Err(Error::shape("propagate", &[t_len, h, w], sharp.shape()));
    }

    let order: Vec<usize> = match direction {
        Direction::Forward => (0..t_len).collect(),
        Direction::Backward => (0..t_len).rev().collect(),
    };
    // Flow from frame t towards the frame visited just before it.
    let step_flow = |t: usize| match direction {
        Direction::Forward => flows.to_previous(t),
        Direction::Backward => flows.to_next(t),
    };

    let zero_feat = Tensor::zeros([h, w, c]);
    let zero_flow = Flow::zeros(h, w);
    let zero_sharp = Tensor::zeros([h, w]);
    let mut out: Vec<Option<Tensor>> = vec![None; t_len];

    for (step, &t) in order.iter().enumerate() {
        let p1 = step.checked_sub(1).map(|s| order[s]);
        let p2 = step.checked_sub(2).map(|s| order[s]);

        let flow1 = match p1 {
            Some(_) => step_flow(t).expect("neighbour exists").clone(),
            None => zero_flow.clone(),
        };
        // O(t → p2) chains through p1: O(t → p1) then O(p1 → p2).
        let flow2 = match (p1, p2) {
            (Some(p), Some(_)) => compose_flow(&flow1, step_flow(p).expect("neighbour exists"))?,
            _ => zero_flow.clone(),
        };
        let prev1 = p1
            .map(|p| out[p].as_ref().expect("visited"))
            .unwrap_or(&zero_feat);
        let prev2 = p2
            .map(|p| out[p].as_ref().expect("visited"))
            .unwrap_or(&zero_feat);
        let warped1 = backward_warp(prev1, &flow1)?;
        let warped2 = backward_warp(prev2, &flow2)?;
        let sharp1 = p1
            .map(|p| sharp.slice_outer(p))
            .unwrap_or_else(|| zero_sharp.clone());
        let sharp2 = p2
            .map(|p| sharp.slice_outer(p))
            .unwrap_or_else(|| zero_sharp.clone());

        let feat = bfa(
            &BfaInputs {
                current: &input[t],
                prev1,
                prev2,
                warped1: &warped1,
                warped2: &warped2,
                flow1: &flow1,
                flow2: &flow2,
                sharp1: &sharp1,
                sharp2: &sharp2,
            },
            weights,
        )?;
        out[t] = Some(feat);
    }
    Ok(out
        .into_iter()
        .map(|f| f.expect("every frame visited"))
        .collect())
}

/// Cascades `weights.len()` branches, alternating direction and starting
/// backward, and returns the last branch as `[T, H, W, C]`.
pub fn propagate(
    features: &[Tensor],
    flows: &FlowSequence,
    sharp: &Tensor,
    weights: &[BfaWeights],
) -> Result<Tensor> {
    if weights.is_empty() {
        return Err(Error::invalid("propagate", "need at least one branch"));
    }
    let mut current = features.to_vec();
    for (j, w) in weights.iter().enumerate() {
        let direction = if j % 2 == 0 {
            Direction::Backward
        } else {
            Direction::Forward
        };
        current = propagate_branch(&current, flows, sharp, direction, w)?;
    }
    Tensor::stack(&current)
}
