//! Acceptance suite: one PASS/FAIL line per criterion. Runs as a plain
//! binary (no libtest harness) so the lines always reach the output.

use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use bsst_cli::commands::{RunManifest, MANIFEST};
use bsst_cli::media;
use bsst_core::analysis::{analytic_flops, instrumented_flops};
use bsst_core::bbfp::{bfa, propagate, propagate_branch, BfaInputs, BfaWeights, Direction};
use bsst_core::blur_map::{normalize, unnormalized_blur};
use bsst_core::bsst::{
    attention_stage, bsst_stack, build_plan, sparse_attention, tokenize, LayerWeights, SparsityPlan,
};
use bsst_core::init::Initializer;
use bsst_core::ops::{
    backward_warp, conv2d, deform_conv2d, soft_composition, soft_split, PatchGrid,
};
use bsst_core::pipeline::FEATURE_SCALE;
use bsst_core::{
    forward, AttentionMode, BlurMapSequence, Flow, FlowSequence, ModelConfig, NetworkWeights,
    Parity, ParitySchedule, Tensor, VideoSequence,
};
use bsst_oracle::attention::{feature_layer, layer, Geometry, LayerParams};
use bsst_oracle::{max_errors, to_f64};
use rayon::prelude::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random(seed: u64, shape: impl Into<Vec<usize>>, lo: f32, hi: f32) -> Tensor {
    Initializer::new(seed).range(shape, lo, hi)
}

fn random_flow(seed: u64, h: usize, w: usize, mag: f32) -> Flow {
    Flow::new(random(seed, [h, w, 2], -mag, mag)).unwrap()
}

fn params(w: &LayerWeights) -> LayerParams {
    LayerParams {
        heads: w.heads,
        dim: w.dim(),
        hidden: w.hidden(),
        tensors: w
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n.to_string(), to_f64(t.data())))
            .collect(),
    }
}

/// Per-window query and key/value frame lists of a plan, keyed by row-major
/// window index.
type FrameLists = HashMap<usize, Vec<usize>>;

fn frame_lists(plan: &SparsityPlan) -> (FrameLists, FrameLists) {
    let cols = plan.mask.cols;
    let mut q = HashMap::new();
    let mut kv = HashMap::new();
    for wp in &plan.windows {
        q.insert(wp.row * cols + wp.col, wp.query_frames.clone());
        kv.insert(wp.row * cols + wp.col, wp.kv_frames.clone());
    }
    (q, kv)
}

const T: usize = 8;
const FEAT: usize = 32;

/// T=8, 32x32x8 features, p=4 s=2 (16x16 tokens of width 128), 2x2 windows.
fn small_config(theta: f32, k: usize, parity: ParitySchedule) -> ModelConfig {
    ModelConfig {
        patch: 4,
        stride: 2,
        channels: 8,
        window: [2, 2],
        pooled: [2, 2],
        heads: 4,
        layers: 1,
        theta,
        k_q: k,
        k_kv: k,
        parity,
        ..ModelConfig::default()
    }
}

fn instance(seed: u64, cfg: &ModelConfig, blur_hi: f32) -> (Tensor, BlurMapSequence, LayerWeights) {
    let x = random(1000 + seed, [T, FEAT, FEAT, cfg.channels], -1.0, 1.0);
    let grid = PatchGrid::new(FEAT, FEAT, cfg.patch, cfg.stride).unwrap();
    let maps = BlurMapSequence::from_blur(
        random(2000 + seed, [T, FEAT, FEAT], 0.0, blur_hi),
        &grid,
        cfg.window,
    )
    .unwrap();
    let w = LayerWeights::for_config(&mut Initializer::new(3000 + seed), cfg);
    (x, maps, w)
}

fn dense_equivalence() -> Outcome {
    let start = Instant::now();
    let cfg = small_config(0.0, T, ParitySchedule::Off);
    let errors: Vec<Result<f64, String>> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let (x, maps, w) = instance(seed, &cfg, 1.0);
            let out = bsst_stack(&x, &maps, &cfg, std::slice::from_ref(&w), false)
                .map_err(|e| e.to_string())?;
            ensure(out.tokens == [16, 16], || {
                format!("token grid {:?}", out.tokens)
            })?;
            ensure(out.plans[0].selected_windows() == 64, || {
                "not every window selected".into()
            })?;
            let want = feature_layer(
                &to_f64(x.data()),
                T,
                FEAT,
                FEAT,
                cfg.channels,
                cfg.patch,
                cfg.stride,
                cfg.window,
                cfg.pooled,
                &params(&w),
                &|_, _| true,
                &|_, _, _| true,
            );
            let (err, mag) = max_errors(out.features.data(), &want);
            Ok(err / mag)
        })
        .collect();
    let worst = errors
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-5, || {
        format!("worst relative error {worst:.2e}")
    })?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "20 instances, worst relative error {worst:.2e}, {secs:.1}s"
    ))
}

fn masked_dense() -> Outcome {
    let start = Instant::now();
    let results: Vec<Result<(f64, usize, usize), String>> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let parity = if seed % 2 == 0 {
                ParitySchedule::Alternate
            } else {
                ParitySchedule::Off
            };
            let cfg = small_config(0.3, T / 2, parity);
            let (x, _, w) = instance(100 + seed, &cfg, 1.0);
            // window levels just above θ at the top, so some windows stay dense
            let u = random(4000 + seed, [T, 8, 8], 0.0, 0.35);
            let plan = build_plan(&u, cfg.theta, cfg.k_q, cfg.k_kv, cfg.parity.for_layer(0))
                .map_err(|e| e.to_string())?;
            let z = tokenize(&x, cfg.patch, cfg.stride).map_err(|e| e.to_string())?;
            let got = sparse_attention(&z, &plan, &w, &cfg, None).map_err(|e| e.to_string())?;
            let (q, kv) = frame_lists(&plan);
            let g = Geometry {
                t: T,
                m: 16,
                n: 16,
                window: cfg.window,
                pooled: cfg.pooled,
            };
            let want = layer(
                &to_f64(z.data()),
                &g,
                &params(&w),
                &|win, t| q.get(&win).is_none_or(|f| f.contains(&t)),
                &|win, _, t| kv.get(&win).is_none_or(|f| f.contains(&t)),
            );
            // selected query slots only
            let d = z.shape()[3];
            let (mut err, mut mag, mut slots) = (0.0f64, 0.0f64, 0);
            for wp in &plan.windows {
                for &t in &wp.query_frames {
                    for a in 0..2 {
                        for b in 0..2 {
                            let tok = (t * 16 + wp.row * 2 + a) * 16 + wp.col * 2 + b;
                            let r = tok * d..(tok + 1) * d;
                            let (e, m) = max_errors(&got.data()[r.clone()], &want[r]);
                            err = err.max(e);
                            mag = mag.max(m);
                            slots += 1;
                        }
                    }
                }
            }
            Ok((
                if slots == 0 { 0.0 } else { err / mag },
                slots,
                plan.selected_windows(),
            ))
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let slots: usize = results.iter().map(|r| r.1).sum();
    let dense_windows: usize = results.iter().map(|r| 64 - r.2).sum();
    let secs = start.elapsed().as_secs_f64();
    ensure(slots > 0, || "no query slot was selected".into())?;
    ensure(worst <= 1e-5, || {
        format!("worst relative error {worst:.2e}")
    })?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "20 instances, {slots} selected query slots, {dense_windows} unselected windows, worst relative error {worst:.2e}, {secs:.1}s"
    ))
}

fn blur_maps() -> Outcome {
    let (t, h, w) = (6, 64, 64);
    let flows = FlowSequence::new(
        (0..t - 1)
            .map(|i| random_flow(10 + i as u64, h, w, 4.0))
            .collect(),
        (0..t - 1)
            .map(|i| random_flow(30 + i as u64, h, w, 4.0))
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let bhat = unnormalized_blur(&flows);
    let (blur, sharp) = normalize(&bhat).map_err(|e| e.to_string())?;
    let as64 = |fs: &[Flow]| {
        fs.iter()
            .map(|f| to_f64(f.as_tensor().data()))
            .collect::<Vec<_>>()
    };
    let (want_hat, want_b, want_a) =
        bsst_oracle::blur::blur_maps(&as64(flows.forward()), &as64(flows.backward()), t, h, w);
    let (e_hat, m_hat) = max_errors(bhat.data(), &want_hat);
    let (e_b, _) = max_errors(blur.data(), &want_b);
    let (e_a, _) = max_errors(sharp.data(), &want_a);
    ensure(e_hat / m_hat <= 1e-6, || {
        format!("unnormalized relative error {:.2e}", e_hat / m_hat)
    })?;
    ensure(e_b <= 1e-6 && e_a <= 1e-6, || {
        format!("B error {e_b:.2e}, A error {e_a:.2e}")
    })?;

    let zero = FlowSequence::zeros(t, h, w);
    let (zb, za) = normalize(&unnormalized_blur(&zero)).map_err(|e| e.to_string())?;
    ensure(zb.data().iter().all(|&v| v == 0.0), || {
        "zero flows gave nonzero B".into()
    })?;
    ensure(za.data().iter().all(|&v| v == 1.0), || {
        "zero flows gave A != 1".into()
    })?;

    let (cb, _) = normalize(&Tensor::full([t, h, w], 2.5)).map_err(|e| e.to_string())?;
    ensure(cb.data().iter().all(|&v| v == 0.0), || {
        "constant unnormalized map did not give B = 0".into()
    })?;

    let (sb, _) = normalize(&unnormalized_blur(&flows.scaled(3.7))).map_err(|e| e.to_string())?;
    let scale_err = sb.max_abs_diff(&blur);
    ensure(scale_err <= 1e-6, || {
        format!("flow scaling moved B by {scale_err:.2e}")
    })?;
    Ok(format!(
        "oracle errors: B-hat {:.1e} rel, B {e_b:.1e}, A {e_a:.1e}; scaling {scale_err:.1e}",
        e_hat / m_hat
    ))
}

fn kernel_identities() -> Outcome {
    let x = random(40, [17, 23, 5], -1.0, 1.0);
    let warped = backward_warp(&x, &Flow::zeros(17, 23)).map_err(|e| e.to_string())?;
    ensure(warped == x, || "zero-flow warp is not bit-exact".into())?;

    let wgt = random(41, [6, 5, 3, 3], -1.0, 1.0);
    let deform = deform_conv2d(
        &x,
        &Tensor::zeros([17, 23, 18]),
        &Tensor::full([17, 23, 9], 1.0),
        &wgt,
        1,
    )
    .map_err(|e| e.to_string())?;
    let direct = conv2d(&x, &wgt, None, 1, 1).map_err(|e| e.to_string())?;
    let d_err = deform.max_abs_diff(&direct);
    ensure(d_err <= 1e-5, || {
        format!("deformable vs direct conv {d_err:.2e}")
    })?;

    let f = random(42, [32, 32, 4], -1.0, 1.0);
    let mut worst = 0.0f32;
    for (p, s) in [(4, 2), (2, 1), (1, 1)] {
        let back = soft_split(&f, p, s)
            .and_then(|z| soft_composition(&z, p, s, 32, 32))
            .map_err(|e| e.to_string())?;
        worst = worst.max(back.max_abs_diff(&f));
    }
    ensure(worst <= 1e-6, || {
        format!("compose(split) error {worst:.2e}")
    })?;
    Ok(format!("deform {d_err:.1e}, compose(split) {worst:.1e}"))
}

fn token_accounting() -> Outcome {
    let mut checked = 0;
    for seed in 0..50u64 {
        let mut init = Initializer::new(500 + seed);
        let pick = |init: &mut Initializer, lo: usize, hi: usize| {
            lo + (init.range([1], 0.0, (hi - lo + 1) as f32).data()[0] as usize).min(hi - lo)
        };
        let t = pick(&mut init, 1, 8);
        let [wh, ww] = [pick(&mut init, 1, 2), pick(&mut init, 1, 2)];
        let [rows, cols] = [pick(&mut init, 1, 3), pick(&mut init, 1, 3)];
        let k_q = pick(&mut init, 1, t);
        let k_kv = pick(&mut init, 1, t);
        let theta = init.range([1], 0.0, 1.0).data()[0];
        let cfg = ModelConfig {
            patch: 1,
            stride: 1,
            channels: 4,
            window: [wh, ww],
            pooled: [1, 1],
            heads: 1,
            layers: 1,
            theta,
            k_q,
            k_kv,
            parity: ParitySchedule::Off,
            ..ModelConfig::default()
        };
        let u = init.range([t, rows, cols], 0.0, 1.0);
        let parity = [Parity::Off, Parity::Odd, Parity::Even][seed as usize % 3];
        let plan = build_plan(&u, theta, k_q, k_kv, parity).map_err(|e| e.to_string())?;
        let z = init.range([t, rows * wh, cols * ww, 4], -1.0, 1.0);
        let w = LayerWeights::for_config(&mut init, &cfg);
        let mut tally = Default::default();
        let out =
            attention_stage(&z, &plan, &w, &cfg, Some(&mut tally)).map_err(|e| e.to_string())?;

        let expected = (plan.mask.count() * k_q * wh * ww) as u64;
        // slots the attention stage actually wrote inside selected windows
        let mut written = 0u64;
        for wp in &plan.windows {
            for tt in 0..t {
                for a in 0..wh {
                    for b in 0..ww {
                        let tok = (tt * rows * wh + wp.row * wh + a) * cols * ww + wp.col * ww + b;
                        if out.data()[tok * 4..tok * 4 + 4] != z.data()[tok * 4..tok * 4 + 4] {
                            written += 1;
                        }
                    }
                }
            }
        }
        ensure(
            tally.sparse_query_tokens == expected && written == expected,
            || {
                format!(
                    "plan {seed}: counted {}, written {written}, expected {expected}",
                    tally.sparse_query_tokens
                )
            },
        )?;
        checked += 1;
    }

    let u = Tensor::full([T, 4, 4], 1.0);
    let plan = build_plan(&u, 0.3, T / 2, T / 2, Parity::Off).map_err(|e| e.to_string())?;
    let kept = plan.sparse_query_tokens([2, 2]) as f64 / (T * 8 * 8) as f64;
    ensure(kept == 0.5, || format!("fully blurry input kept {kept}"))?;
    Ok(format!(
        "{checked} random plans exact; fully blurry input keeps {:.0}% of query tokens",
        kept * 100.0
    ))
}

fn flops_scaling() -> Outcome {
    let cfg = |parity| ModelConfig {
        channels: 8,
        layers: 2,
        heads: 4,
        k_q: 12,
        k_kv: 12,
        parity,
        ..ModelConfig::default()
    };
    let off = cfg(ParitySchedule::Off);
    let tokens = [8, 8];
    let all = 4;
    let logits = |c: &ModelConfig, t, mode| {
        analytic_flops(c, t, tokens, mode, all).map(|r| r.macs.qk_logits as f64)
    };
    let ratio = |c: &ModelConfig, mode| -> Result<f64, String> {
        Ok(logits(c, 48, mode).map_err(|e| e.to_string())?
            / logits(c, 12, mode).map_err(|e| e.to_string())?)
    };
    let dense = ratio(&off, AttentionMode::Dense)?;
    let sparse = ratio(&off, AttentionMode::Sparse)?;
    let sparse_alt = ratio(&cfg(ParitySchedule::Alternate), AttentionMode::Sparse)?;
    ensure(dense >= 15.0, || {
        format!("dense(48)/dense(12) = {dense:.2}")
    })?;
    ensure(sparse <= 1.2, || {
        format!("sparse(48)/sparse(12) = {sparse:.2}")
    })?;

    for t in [4, 8] {
        for mode in [AttentionMode::Dense, AttentionMode::Sparse] {
            let c = ModelConfig {
                attention: mode,
                ..off.clone()
            };
            let (h, w) = (tokens[0] * c.stride, tokens[1] * c.stride);
            let grid = PatchGrid::new(h, w, c.patch, c.stride).map_err(|e| e.to_string())?;
            let maps = BlurMapSequence::from_blur(Tensor::full([t, h, w], 1.0), &grid, c.window)
                .map_err(|e| e.to_string())?;
            let mut init = Initializer::new(60 + t as u64);
            let layers: Vec<_> = (0..c.layers)
                .map(|_| LayerWeights::for_config(&mut init, &c))
                .collect();
            let x = init.range([t, h, w, c.channels], -1.0, 1.0);
            let run = bsst_stack(&x, &maps, &c, &layers, true).map_err(|e| e.to_string())?;
            let counted = instrumented_flops(&run, &c).map_err(|e| e.to_string())?;
            let analytic = analytic_flops(&c, t, tokens, mode, counted.selected_windows)
                .map_err(|e| e.to_string())?;
            ensure(counted.macs == analytic.macs, || {
                format!("T={t} {mode}: {:?} != {:?}", counted.macs, analytic.macs)
            })?;
        }
    }
    Ok(format!(
        "logits dense ratio {dense:.2}, sparse ratio {sparse:.2} (alternating parity: {sparse_alt:.2}); counters exact at T=4,8"
    ))
}

fn bbfp() -> Outcome {
    let (h, w, c) = (8, 8, 4);
    let t = 5;
    let feats: Vec<Tensor> = (0..t)
        .map(|i| random(700 + i as u64, [h, w, c], -1.0, 1.0))
        .collect();
    let flows = FlowSequence::new(
        (0..t - 1)
            .map(|i| random_flow(720 + i as u64, h, w, 1.5))
            .collect(),
        (0..t - 1)
            .map(|i| random_flow(740 + i as u64, h, w, 1.5))
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let sharp = random(760, [t, h, w], 0.0, 1.0);
    let wts = BfaWeights::seeded(&mut Initializer::new(761), c);
    let base = propagate_branch(&feats, &flows, &sharp, Direction::Forward, &wts)
        .map_err(|e| e.to_string())?;
    let mut perturbed = feats.clone();
    perturbed[3] = random(762, [h, w, c], -5.0, 5.0);
    let moved = propagate_branch(&perturbed, &flows, &sharp, Direction::Forward, &wts)
        .map_err(|e| e.to_string())?;
    ensure((0..3).all(|i| moved[i] == base[i]), || {
        "forward branch output before t+1 changed".into()
    })?;
    ensure(moved[3] != base[3], || {
        "perturbation had no effect at all".into()
    })?;

    // closed gate: blurry t-1 neighbour and saturated-negative mask logits
    let mut gated = BfaWeights::seeded(&mut Initializer::new(763), c);
    for o in 36..45 {
        gated.offset_bias.data_mut()[o] = -60.0;
    }
    let prev1 = random(764, [h, w, c], -1.0, 1.0);
    let prev2 = random(765, [h, w, c], -1.0, 1.0);
    let (flow1, flow2) = (random_flow(766, h, w, 1.5), random_flow(767, h, w, 1.5));
    let warped1 = backward_warp(&prev1, &flow1).map_err(|e| e.to_string())?;
    let warped2 = backward_warp(&prev2, &flow2).map_err(|e| e.to_string())?;
    let (blurry, sharp2) = (Tensor::zeros([h, w]), random(768, [h, w], 0.0, 1.0));
    let step = |p1: &Tensor| {
        bfa(
            &BfaInputs {
                current: &feats[0],
                prev1: p1,
                prev2: &prev2,
                warped1: &warped1,
                warped2: &warped2,
                flow1: &flow1,
                flow2: &flow2,
                sharp1: &blurry,
                sharp2: &sharp2,
            },
            &gated,
        )
    };
    let with = step(&prev1).map_err(|e| e.to_string())?;
    let without = step(&Tensor::zeros([h, w, c])).map_err(|e| e.to_string())?;
    let leak = with.max_abs_diff(&without);
    ensure(leak < 1e-4, || {
        format!("t-1 aligned contribution {leak:.2e}")
    })?;

    let zero_prop = propagate(
        &feats,
        &flows,
        &sharp,
        &[BfaWeights::zeros(c), BfaWeights::zeros(c)],
    )
    .map_err(|e| e.to_string())?;
    ensure(zero_prop == Tensor::stack(&feats).unwrap(), || {
        "zero-weight propagation is not the identity".into()
    })?;

    let config = ModelConfig {
        channels: 8,
        layers: 2,
        heads: 2,
        k_q: 2,
        k_kv: 2,
        ..ModelConfig::default()
    };
    let video =
        VideoSequence::new(random(769, [4, 32, 32, 3], 0.0, 1.0)).map_err(|e| e.to_string())?;
    let fh = 32 / FEATURE_SCALE;
    let vflows = FlowSequence::new(
        (0..3).map(|i| random_flow(770 + i, fh, fh, 1.0)).collect(),
        (0..3).map(|i| random_flow(780 + i, fh, fh, 1.0)).collect(),
    )
    .map_err(|e| e.to_string())?;
    let out = forward(
        &video,
        &vflows,
        &config,
        &NetworkWeights::zeros(&config),
        false,
    )
    .map_err(|e| e.to_string())?;
    ensure(out.restored.tensor() == video.tensor(), || {
        "zero-weight network is not the identity".into()
    })?;
    Ok(format!(
        "causal bit-exact; gated t-1 contribution {leak:.1e}; zero weights give identity"
    ))
}

fn run_bin(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_bsst"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "bsst {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    std::fs::write(
        dir.join("box.json"),
        r#"{"kind":"moving_box","frames":8,"height":64,"width":64,"box":[10,18,20,16],"velocity":[3,1.5]}"#,
    )
    .map_err(|e| e.to_string())?;
    std::fs::write(dir.join("config.json"), "{}").map_err(|e| e.to_string())?;
    run_bin(&["synth", "--spec", &p("box.json"), "--out", &p("data")])?;

    let start = Instant::now();
    run_bin(&[
        "run",
        "--config",
        &p("config.json"),
        "--frames",
        &p("data/frames"),
        "--flows",
        &p("data/flows"),
        "--out",
        &p("first"),
    ])?;
    let secs = start.elapsed().as_secs_f64();
    run_bin(&[
        "run",
        "--from-manifest",
        &p("first/manifest.json"),
        "--out",
        &p("second"),
    ])?;

    let manifest: RunManifest = serde_json::from_str(
        &std::fs::read_to_string(dir.join("first").join(MANIFEST)).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    ensure(manifest.outputs.len() == 9, || {
        format!("{} outputs listed", manifest.outputs.len())
    })?;
    for name in &manifest.outputs {
        let a = std::fs::read(dir.join("first").join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dir.join("second").join(name)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{name} differs between runs"))?;
    }
    let restored = media::read_frames(Path::new(&p("first"))).map_err(|e| e.to_string())?;
    ensure(restored.frames() == 8, || {
        format!("{} restored frames", restored.frames())
    })?;
    ensure(
        restored
            .tensor()
            .data()
            .iter()
            .all(|v| (0.0..=1.0).contains(v)),
        || "pixel outside [0, 1]".into(),
    )?;
    ensure(secs < 30.0, || format!("run took {secs:.1}s"))?;
    Ok(format!(
        "8 frames in {secs:.2}s, rerun from manifest bit-identical"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("dense equivalence", dense_equivalence),
        ("masked dense", masked_dense),
        ("blur maps", blur_maps),
        ("kernel identities", kernel_identities),
        ("token accounting", token_accounting),
        ("FLOPs scaling", flops_scaling),
        ("propagation properties", bbfp),
        ("end-to-end run", end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}. {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
