use crate::blur_map::BlurMapSequence;
use crate::bsst::layer::{sparse_attention, LayerWeights, MacTally, WindowGeometry};
use crate::bsst::plan::{build_plan, SparsityPlan};
use crate::config::{AttentionMode, ModelConfig};
use crate::error::{Error, Result};
use crate::ops::{soft_composition, soft_split};
use crate::tensor::Tensor;

/// Soft-splits every frame of `[T, H, W, C]` into `[T, M, N, p²C]` tokens.
pub fn tokenize(features: &Tensor, patch: usize, stride: usize) -> Result<Tensor> {
    features.expect_rank("tokenize", 4)?;
    let frames: Vec<Tensor> = features
        .outer_slices()
        .map(|f| soft_split(&f, patch, stride))
        .collect::<Result<_>>()?;
    Tensor::stack(&frames)
}

/// Inverse of [`tokenize`] by overlap averaging.
pub fn detokenize(
    tokens: &Tensor,
    patch: usize,
    stride: usize,
    height: usize,
    width: usize,
) -> Result<Tensor> {
    tokens.expect_rank("detokenize", 4)?;
    let frames: Vec<Tensor> = tokens
        .outer_slices()
        .map(|z| soft_composition(&z, patch, stride, height, width))
        .collect::<Result<_>>()?;
    Tensor::stack(&frames)
}

#[derive(Debug, Clone)]
pub struct StackOutput {
    pub features: Tensor,
    /// Token grid `M × N`.
    pub tokens: [usize; 2],
    /// One plan per layer.
    pub plans: Vec<SparsityPlan>,
    pub tally: Option<MacTally>,
}

/// Selection for layer `layer` given the clip's window blur levels.
pub fn layer_plan(
    blur: &BlurMapSequence,
    config: &ModelConfig,
    layer: usize,
) -> Result<SparsityPlan> {
    let u = &blur.window_levels;
    let (t, m, n) = u.dims3("layer_plan")?;
    match config.attention {
        AttentionMode::Dense => Ok(SparsityPlan::dense(t, m, n)),
        AttentionMode::Sparse => build_plan(
            u,
            config.theta,
            config.k_q,
            config.k_kv,
            config.parity.for_layer(layer),
        ),
    }
}

/// Runs the transformer layers over features `[T, H, W, C]`. Each layer
/// tokenizes, attends, and folds the tokens back to feature maps.
pub fn bsst_stack(
    features: &Tensor,
    blur: &BlurMapSequence,
    config: &ModelConfig,
    layers: &[LayerWeights],
    count: bool,
) -> Result<StackOutput> {
    features.expect_rank("bsst_stack", 4)?;
    let s = features.shape();
    let (t, h, w) = (s[0], s[1], s[2]);
    if layers.len() != config.layers {
        return Err(Error::Config(format!(
            "{} layer weight sets for {} layers",
            layers.len(),
            config.layers
        )));
    }
    if blur.frames() != t || (blur.grid.height, blur.grid.width) != (h, w) {
        return Err(Error::Geometry(format!(
            "blur maps cover {} frames on a {}x{} grid, features are {t}x{h}x{w}",
            blur.frames(),
            blur.grid.height,
            blur.grid.width
        )));
    }

    let mut tally = count.then(MacTally::default);
    let mut plans = Vec::with_capacity(layers.len());
    let mut x = features.clone();
    let tokens = [blur.grid.rows, blur.grid.cols];
    for (l, weights) in layers.iter().enumerate() {
        let plan = layer_plan(blur, config, l)?;
        let z = tokenize(&x, config.patch, config.stride)?;
        WindowGeometry::from_tokens(&z, config)?;
        let z = sparse_attention(&z, &plan, weights, config, tally.as_mut())?;
        x = detokenize(&z, config.patch, config.stride, h, w)?;
        plans.push(plan);
    }
    Ok(StackOutput {
        features: x,
        tokens,
        plans,
        tally,
    })
}
