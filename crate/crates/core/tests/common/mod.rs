#![allow(dead_code)]

use std::collections::HashMap;

use bsst_core::bbfp::BfaWeights;
use bsst_core::bsst::LayerWeights;
use bsst_core::init::Initializer;
use bsst_core::tensor::{Flow, Tensor};
use bsst_oracle::attention::LayerParams;
use bsst_oracle::propagation::BfaParams;
use bsst_oracle::to_f64;

pub fn random(seed: u64, shape: impl Into<Vec<usize>>, lo: f32, hi: f32) -> Tensor {
    Initializer::new(seed).range(shape, lo, hi)
}

pub fn random_flow(seed: u64, h: usize, w: usize, mag: f32) -> Flow {
    Flow::new(random(seed, [h, w, 2], -mag, mag)).unwrap()
}

pub fn layer_params(w: &LayerWeights) -> LayerParams {
    let tensors: HashMap<String, Vec<f64>> = w
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n.to_string(), to_f64(t.data())))
        .collect();
    LayerParams {
        heads: w.heads,
        dim: w.dim(),
        hidden: w.hidden(),
        tensors,
    }
}

pub fn bfa_params(w: &BfaWeights) -> BfaParams {
    BfaParams {
        c: w.channels(),
        offset_w: to_f64(w.offset_weight.data()),
        offset_b: to_f64(w.offset_bias.data()),
        dcn_w: to_f64(w.dcn_weight.data()),
        fusion_w: to_f64(w.fusion_weight.data()),
        fusion_b: to_f64(w.fusion_bias.data()),
    }
}

/// Asserts `max |a - b| <= tol * max(1, max |b|)`.
pub fn assert_close(a: &Tensor, b: &[f64], tol: f64, what: &str) {
    let (err, mag) = bsst_oracle::max_errors(a.data(), b);
    assert!(
        err <= tol * mag.max(1.0),
        "{what}: max error {err:e} (scale {mag:e})"
    );
}
