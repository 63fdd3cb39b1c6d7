mod common;

use bsst_core::bbfp::{bfa, propagate, propagate_branch, BfaInputs, BfaWeights, Direction};
use bsst_core::blur_map::FlowSequence;
use bsst_core::init::Initializer;
use bsst_core::ops::backward_warp;
use bsst_core::tensor::{Flow, Tensor};
use bsst_oracle::propagation::{bfa_step, propagate as oracle_propagate};
use bsst_oracle::to_f64;
use common::{assert_close, bfa_params, random, random_flow};

const H: usize = 8;
const W: usize = 8;
const C: usize = 4;

struct Step {
    cur: Tensor,
    prev1: Tensor,
    prev2: Tensor,
    flow1: Flow,
    flow2: Flow,
    sharp1: Tensor,
    sharp2: Tensor,
}

fn step(seed: u64) -> Step {
    Step {
        cur: random(seed, [H, W, C], -1.0, 1.0),
        prev1: random(seed + 1, [H, W, C], -1.0, 1.0),
        prev2: random(seed + 2, [H, W, C], -1.0, 1.0),
        flow1: random_flow(seed + 3, H, W, 1.5),
        flow2: random_flow(seed + 4, H, W, 1.5),
        sharp1: random(seed + 5, [H, W], 0.0, 1.0),
        sharp2: random(seed + 6, [H, W], 0.0, 1.0),
    }
}

fn run(s: &Step, prev1: &Tensor, warped1: &Tensor, w: &BfaWeights) -> Tensor {
    let warped2 = backward_warp(&s.prev2, &s.flow2).unwrap();
    bfa(
        &BfaInputs {
            current: &s.cur,
            prev1,
            prev2: &s.prev2,
            warped1,
            warped2: &warped2,
            flow1: &s.flow1,
            flow2: &s.flow2,
            sharp1: &s.sharp1,
            sharp2: &s.sharp2,
        },
        w,
    )
    .unwrap()
}

#[test]
fn bfa_matches_step_by_step_reference() {
    let s = step(1);
    let w = BfaWeights::seeded(&mut Initializer::new(2), C);
    let warped1 = backward_warp(&s.prev1, &s.flow1).unwrap();
    let got = run(&s, &s.prev1, &warped1, &w);
    let want = bfa_step(
        &to_f64(s.cur.data()),
        &to_f64(s.prev1.data()),
        &to_f64(s.prev2.data()),
        &to_f64(s.flow1.as_tensor().data()),
        &to_f64(s.flow2.as_tensor().data()),
        &to_f64(s.sharp1.data()),
        &to_f64(s.sharp2.data()),
        H,
        W,
        &bfa_params(&w),
    );
    assert_close(&got, &want, 1e-5, "bfa");
}

#[test]
fn blurry_neighbour_with_closed_gate_is_ignored() {
    let mut s = step(10);
    s.sharp1 = Tensor::zeros([H, W]);
    let mut w = BfaWeights::seeded(&mut Initializer::new(11), C);
    // mask logits of the first neighbour saturate negative
    for o in 36..45 {
        w.offset_bias.data_mut()[o] = -60.0;
    }
    let warped1 = backward_warp(&s.prev1, &s.flow1).unwrap();
    let with = run(&s, &s.prev1, &warped1, &w);
    let without = run(&s, &Tensor::zeros([H, W, C]), &warped1, &w);
    assert!(with.max_abs_diff(&without) < 1e-4);
}

fn seq(seed: u64, t: usize) -> (Vec<Tensor>, FlowSequence, Tensor) {
    let feats = (0..t)
        .map(|i| random(seed + i as u64, [H, W, C], -1.0, 1.0))
        .collect();
    let fwd = (0..t - 1)
        .map(|i| random_flow(seed + 20 + i as u64, H, W, 1.5))
        .collect();
    let bwd = (0..t - 1)
        .map(|i| random_flow(seed + 40 + i as u64, H, W, 1.5))
        .collect();
    let flows = FlowSequence::new(fwd, bwd).unwrap();
    let sharp = random(seed + 60, [t, H, W], 0.0, 1.0);
    (feats, flows, sharp)
}

#[test]
fn propagation_matches_straight_line_reference() {
    let (feats, flows, sharp) = seq(100, 4);
    let mut init = Initializer::new(3);
    let weights: Vec<BfaWeights> = (0..3).map(|_| BfaWeights::seeded(&mut init, C)).collect();
    let got = propagate(&feats, &flows, &sharp, &weights).unwrap();
    let want = oracle_propagate(
        &feats.iter().map(|f| to_f64(f.data())).collect::<Vec<_>>(),
        &flows
            .forward()
            .iter()
            .map(|f| to_f64(f.as_tensor().data()))
            .collect::<Vec<_>>(),
        &flows
            .backward()
            .iter()
            .map(|f| to_f64(f.as_tensor().data()))
            .collect::<Vec<_>>(),
        &sharp
            .outer_slices()
            .map(|s| to_f64(s.data()))
            .collect::<Vec<_>>(),
        H,
        W,
        &weights.iter().map(bfa_params).collect::<Vec<_>>(),
    );
    let flat: Vec<f64> = want.into_iter().flatten().collect();
    assert_close(&got, &flat, 1e-4, "propagate");
}

#[test]
fn zero_weights_cascade_to_identity() {
    let (feats, _, _) = seq(200, 3);
    let flows = FlowSequence::zeros(3, H, W);
    let sharp = Tensor::full([3, H, W], 1.0);
    let out = propagate(&feats, &flows, &sharp, &[BfaWeights::zeros(C)]).unwrap();
    assert_eq!(out, Tensor::stack(&feats).unwrap());
}

#[test]
fn forward_branch_is_causal() {
    let (feats, flows, sharp) = seq(300, 5);
    let w = BfaWeights::seeded(&mut Initializer::new(4), C);
    let base = propagate_branch(&feats, &flows, &sharp, Direction::Forward, &w).unwrap();
    let mut perturbed = feats.clone();
    perturbed[3] = random(999, [H, W, C], -5.0, 5.0);
    let out = propagate_branch(&perturbed, &flows, &sharp, Direction::Forward, &w).unwrap();
    for t in 0..3 {
        assert_eq!(out[t], base[t], "frame {t}");
    }
    assert_ne!(out[3], base[3]);
}
