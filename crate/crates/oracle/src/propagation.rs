//! Blur-aware second-order feature propagation.

use crate::conv::{conv2d, deform_conv2d};
use crate::warp;

/// Weights of one propagation branch, channel width `c`.
pub struct BfaParams {
    pub c: usize,
    /// `[54, 3c + 6, 3, 3]`: 36 offset channels then 18 mask logits.
    pub offset_w: Vec<f64>,
    pub offset_b: Vec<f64>,
    /// `[c, 2c, 3, 3]`.
    pub dcn_w: Vec<f64>,
    /// `[c, 2c, 3, 3]`.
    pub fusion_w: Vec<f64>,
    pub fusion_b: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One alignment step. `prev*` are this branch's outputs one and two steps
/// back, `flow*` the flows from the current frame to those frames, `sharp*`
/// their sharp maps `[H, W]`.
#[allow(clippy::too_many_arguments)]
pub fn bfa_step(
    cur: &[f64],
    prev1: &[f64],
    prev2: &[f64],
    flow1: &[f64],
    flow2: &[f64],
    sharp1: &[f64],
    sharp2: &[f64],
    h: usize,
    w: usize,
    p: &BfaParams,
) -> Vec<f64> {
    let c = p.c;
    let warped1 = warp(prev1, h, w, c, flow1);
    let warped2 = warp(prev2, h, w, c, flow2);

    let cc = 3 * c + 6;
    let mut cond = Vec::with_capacity(h * w * cc);
    for i in 0..h * w {
        cond.extend_from_slice(&cur[i * c..(i + 1) * c]);
        cond.extend_from_slice(&warped1[i * c..(i + 1) * c]);
        cond.extend_from_slice(&warped2[i * c..(i + 1) * c]);
        cond.extend_from_slice(&flow1[2 * i..2 * i + 2]);
        cond.extend_from_slice(&flow2[2 * i..2 * i + 2]);
        cond.push(sharp1[i]);
        cond.push(sharp2[i]);
    }
    let (raw, _, _) = conv2d(&cond, h, w, cc, &p.offset_w, Some(&p.offset_b), 54, 3, 1, 1);

    let mut offsets = vec![0.0; h * w * 36];
    let mut mask = vec![0.0; h * w * 18];
    for i in 0..h * w {
        let r = &raw[i * 54..(i + 1) * 54];
        for g in 0..2 {
            let (flow, sharp) = if g == 0 {
                (flow1, sharp1)
            } else {
                (flow2, sharp2)
            };
            let (u, v) = (flow[2 * i], flow[2 * i + 1]);
            for tap in 0..9 {
                let o = g * 9 + tap;
                offsets[(i * 18 + o) * 2] = r[2 * o] + v;
                offsets[(i * 18 + o) * 2 + 1] = r[2 * o + 1] + u;
                mask[i * 18 + o] = (sigmoid(r[36 + o]) + sharp[i]).clamp(0.0, 1.0);
            }
        }
    }

    let mut neigh = Vec::with_capacity(h * w * 2 * c);
    for i in 0..h * w {
        neigh.extend_from_slice(&prev1[i * c..(i + 1) * c]);
        neigh.extend_from_slice(&prev2[i * c..(i + 1) * c]);
    }
    let aligned = deform_conv2d(&neigh, h, w, 2 * c, &offsets, &mask, &p.dcn_w, c, 3, 2);

    let mut fin = Vec::with_capacity(h * w * 2 * c);
    for i in 0..h * w {
        fin.extend_from_slice(&cur[i * c..(i + 1) * c]);
        fin.extend_from_slice(&aligned[i * c..(i + 1) * c]);
    }
    let (fused, _, _) = conv2d(
        &fin,
        h,
        w,
        2 * c,
        &p.fusion_w,
        Some(&p.fusion_b),
        c,
        3,
        1,
        1,
    );
    cur.iter().zip(&fused).map(|(a, b)| a + b).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Runs `branches.len()` branches, the first backward in time, then
/// alternating. `feats[t]` is `[H, W, c]`, flows are `[H, W, 2]`, `sharp[t]`
/// is `[H, W]`.
pub fn propagate(
    feats: &[Vec<f64>],
    forward: &[Vec<f64>],
    backward: &[Vec<f64>],
    sharp: &[Vec<f64>],
    h: usize,
    w: usize,
    branches: &[BfaParams],
) -> Vec<Vec<f64>> {
    let t_len = feats.len();
    let mut cur: Vec<Vec<f64>> = feats.to_vec();
    for (j, p) in branches.iter().enumerate() {
        let c = p.c;
        let zf = vec![0.0; h * w * c];
        let zo = vec![0.0; h * w * 2];
        let zs = vec![0.0; h * w];
        let mut out: Vec<Vec<f64>> = vec![Vec::new(); t_len];
        let backward_pass = j % 2 == 0;
        for step in 0..t_len {
            let t = if backward_pass {
                t_len - 1 - step
            } else {
                step
            };
            // Neighbours one and two steps back along the traversal.
            let (n1, n2) = if backward_pass {
                (
                    (t + 1 < t_len).then_some(t + 1),
                    (t + 2 < t_len).then_some(t + 2),
                )
            } else {
                (t.checked_sub(1), t.checked_sub(2))
            };
            let to_n = |from: usize| -> &Vec<f64> {
                if backward_pass {
                    &forward[from]
                } else {
                    &backward[from - 1]
                }
            };
            let flow1 = match n1 {
                Some(_) => to_n(t).clone(),
                None => zo.clone(),
            };
            let flow2 = match (n1, n2) {
                (Some(a), Some(_)) => add(&flow1, &warp(to_n(a), h, w, 2, &flow1)),
                _ => zo.clone(),
            };
            let prev1 = n1.map_or(&zf, |a| &out[a]);
            let prev2 = n2.map_or(&zf, |a| &out[a]);
            let s1 = n1.map_or(&zs, |a| &sharp[a]);
            let s2 = n2.map_or(&zs, |a| &sharp[a]);
            let r = bfa_step(&cur[t], prev1, prev2, &flow1, &flow2, s1, s2, h, w, p);
            out[t] = r;
        }
        cur = out;
    }
    cur
}
