//! One sparse spatio-temporal transformer layer over a token grid
//! `[T, M, N, C_z]`.
//!
//! Layout of the key/value set of window `(i, j)` at one frame: an
//! `(h + h_p) × (w + w_p)` grid whose top-left `h × w` block is the window
//! itself, the `w_p` columns to its right and `h_p` rows below it come from
//! the neighbouring tokens (wrapping cyclically at the grid border), and the
//! bottom-right `h_p × w_p` corner holds that frame's pooled global tokens.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsst::plan::SparsityPlan;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::ops::{gelu, layer_norm, linear, matmul_nt, softmax_in_place};
use crate::tensor::Tensor;

/// Depthwise kernel size of the pooled-token branch.
pub const POOL_KERNEL: usize = 3;
pub const LN_EPS: f32 = 1e-5;

/// Window partition of a token grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowGeometry {
    pub frames: usize,
    /// Token grid `M × N`.
    pub tokens: [usize; 2],
    /// Window size `h × w`.
    pub window: [usize; 2],
    /// Pooled global grid `h_p × w_p`.
    pub pooled: [usize; 2],
    pub dim: usize,
}

impl WindowGeometry {
    pub fn new(
        frames: usize,
        tokens: [usize; 2],
        dim: usize,
        config: &ModelConfig,
    ) -> Result<Self> {
        let g = WindowGeometry {
            frames,
            tokens,
            window: config.window,
            pooled: config.pooled,
            dim,
        };
        if !tokens[0].is_multiple_of(g.window[0]) || !tokens[1].is_multiple_of(g.window[1]) {
            return Err(Error::Geometry(format!(
                "{}x{} token grid is not divisible into {}x{} windows",
                tokens[0], tokens[1], g.window[0], g.window[1]
            )));
        }
        g.pool_strides()?;
        Ok(g)
    }

    pub fn from_tokens(z: &Tensor, config: &ModelConfig) -> Result<Self> {
        z.expect_rank("token grid", 4)?;
        let s = z.shape();
        Self::new(s[0], [s[1], s[2]], s[3], config)
    }

    /// Window grid `m × n`.
    pub fn windows(&self) -> [usize; 2] {
        [
            self.tokens[0] / self.window[0],
            self.tokens[1] / self.window[1],
        ]
    }

    pub fn window_count(&self) -> usize {
        let [m, n] = self.windows();
        m * n
    }

    pub fn window_tokens(&self) -> usize {
        self.window[0] * self.window[1]
    }

    pub fn kv_tokens_per_frame(&self) -> usize {
        (self.window[0] + self.pooled[0]) * (self.window[1] + self.pooled[1])
    }

    pub fn token_count(&self) -> usize {
        self.frames * self.tokens[0] * self.tokens[1]
    }

    /// Depthwise-conv strides `floor(M / h_p)`, `floor(N / w_p)`. The conv
    /// pads by one on every side, so it yields `ceil(M / stride)` rows; fails
    /// unless that is exactly `h_p × w_p`.
    pub fn pool_strides(&self) -> Result<[usize; 2]> {
        let mut strides = [0; 2];
        for (a, stride_out) in strides.iter_mut().enumerate() {
            let (len, want) = (self.tokens[a], self.pooled[a]);
            let stride = len / want.max(1);
            let got = if stride == 0 { 0 } else { len.div_ceil(stride) };
            if got != want {
                return Err(Error::Geometry(format!(
                    "pooled tokens: {len} tokens at stride {stride} give {got}, need {want}"
                )));
            }
            *stride_out = stride;
        }
        Ok(strides)
    }
}

/// Weights of one transformer layer for token width `C_z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub heads: usize,
    pub norm1_gamma: Tensor,
    pub norm1_beta: Tensor,
    pub q_weight: Tensor,
    pub q_bias: Tensor,
    pub k_weight: Tensor,
    pub k_bias: Tensor,
    pub v_weight: Tensor,
    pub v_bias: Tensor,
    /// Depthwise kernels `[3, 3, C_z]` shared by both pooled-token maps.
    pub pool_kernel: Tensor,
    pub pool_k_weight: Tensor,
    pub pool_k_bias: Tensor,
    pub pool_v_weight: Tensor,
    pub pool_v_bias: Tensor,
    pub out_weight: Tensor,
    pub out_bias: Tensor,
    pub norm2_gamma: Tensor,
    pub norm2_beta: Tensor,
    pub ffn1_weight: Tensor,
    pub ffn1_bias: Tensor,
    pub ffn2_weight: Tensor,
    pub ffn2_bias: Tensor,
}

impl LayerWeights {
    pub fn zeros(dim: usize, hidden: usize, heads: usize) -> Self {
        let sq = || Tensor::zeros([dim, dim]);
        let vec = || Tensor::zeros([dim]);
        LayerWeights {
            heads,
            norm1_gamma: Tensor::full([dim], 1.0),
            norm1_beta: vec(),
            q_weight: sq(),
            q_bias: vec(),
            k_weight: sq(),
            k_bias: vec(),
            v_weight: sq(),
            v_bias: vec(),
            pool_kernel: Tensor::zeros([POOL_KERNEL, POOL_KERNEL, dim]),
            pool_k_weight: sq(),
            pool_k_bias: vec(),
            pool_v_weight: sq(),
            pool_v_bias: vec(),
            out_weight: sq(),
            out_bias: vec(),
            norm2_gamma: Tensor::full([dim], 1.0),
            norm2_beta: vec(),
            ffn1_weight: Tensor::zeros([hidden, dim]),
            ffn1_bias: Tensor::zeros([hidden]),
            ffn2_weight: Tensor::zeros([dim, hidden]),
            ffn2_bias: vec(),
        }
    }

    pub fn seeded(init: &mut Initializer, dim: usize, hidden: usize, heads: usize) -> Self {
        let mut w = Self::zeros(dim, hidden, heads);
        w.q_weight = init.uniform([dim, dim], dim);
        w.q_bias = init.uniform([dim], dim);
        w.k_weight = init.uniform([dim, dim], dim);
        w.k_bias = init.uniform([dim], dim);
        w.v_weight = init.uniform([dim, dim], dim);
        w.v_bias = init.uniform([dim], dim);
        w.pool_kernel = init.uniform([POOL_KERNEL, POOL_KERNEL, dim], POOL_KERNEL * POOL_KERNEL);
        w.pool_k_weight = init.uniform([dim, dim], dim);
        w.pool_k_bias = init.uniform([dim], dim);
        w.pool_v_weight = init.uniform([dim, dim], dim);
        w.pool_v_bias = init.uniform([dim], dim);
        w.out_weight = init.uniform([dim, dim], dim);
        w.out_bias = init.uniform([dim], dim);
        w.ffn1_weight = init.uniform([hidden, dim], dim);
        w.ffn1_bias = init.uniform([hidden], dim);
        w.ffn2_weight = init.uniform([dim, hidden], hidden);
        w.ffn2_bias = init.uniform([dim], hidden);
        w
    }

    pub fn for_config(init: &mut Initializer, config: &ModelConfig) -> Self {
        Self::seeded(init, config.token_dim(), config.ffn_hidden(), config.heads)
    }

    pub fn dim(&self) -> usize {
        self.q_bias.len()
    }

    pub fn hidden(&self) -> usize {
        self.ffn1_bias.len()
    }

    /// Zeroes the attention output projection and the second FFN layer, so
    /// the layer reduces to its residual path.
    pub fn zero_residual_branches(&mut self) {
        for t in [
            &mut self.out_weight,
            &mut self.out_bias,
            &mut self.ffn2_weight,
            &mut self.ffn2_bias,
        ] {
            t.data_mut().fill(0.0);
        }
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("norm1_gamma", &self.norm1_gamma),
            ("norm1_beta", &self.norm1_beta),
            ("q_weight", &self.q_weight),
            ("q_bias", &self.q_bias),
            ("k_weight", &self.k_weight),
            ("k_bias", &self.k_bias),
            ("v_weight", &self.v_weight),
            ("v_bias", &self.v_bias),
            ("pool_kernel", &self.pool_kernel),
            ("pool_k_weight", &self.pool_k_weight),
            ("pool_k_bias", &self.pool_k_bias),
            ("pool_v_weight", &self.pool_v_weight),
            ("pool_v_bias", &self.pool_v_bias),
            ("out_weight", &self.out_weight),
            ("out_bias", &self.out_bias),
            ("norm2_gamma", &self.norm2_gamma),
            ("norm2_beta", &self.norm2_beta),
            ("ffn1_weight", &self.ffn1_weight),
            ("ffn1_bias", &self.ffn1_bias),
            ("ffn2_weight", &self.ffn2_weight),
            ("ffn2_bias", &self.ffn2_bias),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("norm1_gamma", &mut self.norm1_gamma),
            ("norm1_beta", &mut self.norm1_beta),
            ("q_weight", &mut self.q_weight),
            ("q_bias", &mut self.q_bias),
            ("k_weight", &mut self.k_weight),
            ("k_bias", &mut self.k_bias),
            ("v_weight", &mut self.v_weight),
            ("v_bias", &mut self.v_bias),
            ("pool_kernel", &mut self.pool_kernel),
            ("pool_k_weight", &mut self.pool_k_weight),
            ("pool_k_bias", &mut self.pool_k_bias),
            ("pool_v_weight", &mut self.pool_v_weight),
            ("pool_v_bias", &mut self.pool_v_bias),
            ("out_weight", &mut self.out_weight),
            ("out_bias", &mut self.out_bias),
            ("norm2_gamma", &mut self.norm2_gamma),
            ("norm2_beta", &mut self.norm2_beta),
            ("ffn1_weight", &mut self.ffn1_weight),
            ("ffn1_bias", &mut self.ffn1_bias),
            ("ffn2_weight", &mut self.ffn2_weight),
            ("ffn2_bias", &mut self.ffn2_bias),
        ]
    }
}

/// Multiply-accumulate counts per stage, plus query-token bookkeeping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacTally {
    pub qkv_projection: u64,
    pub global_tokens: u64,
    pub qk_logits: u64,
    pub attention_values: u64,
    pub output_projection: u64,
    pub ffn: u64,
    /// Query tokens processed by the sparse path.
    pub sparse_query_tokens: u64,
    /// Query tokens processed by the dense fallback.
    pub dense_query_tokens: u64,
}

impl MacTally {
    pub fn total(&self) -> u64 {
        self.qkv_projection
            + self.global_tokens
            + self.qk_logits
            + self.attention_values
            + self.output_projection
            + self.ffn
    }
}

impl std::ops::AddAssign for MacTally {
    fn add_assign(&mut self, o: Self) {
        self.qkv_projection += o.qkv_projection;
        self.global_tokens += o.global_tokens;
        self.qk_logits += o.qk_logits;
        self.attention_values += o.attention_values;
        self.output_projection += o.output_projection;
        self.ffn += o.ffn;
        self.sparse_query_tokens += o.sparse_query_tokens;
        self.dense_query_tokens += o.dense_query_tokens;
    }
}

/// Pooled global key and value tokens, each `[T, h_p, w_p, C_z]`:
/// `l_k(DC(z))` and `l_v(DC(z))`.
pub fn global_tokens(
    z: &Tensor,
    weights: &LayerWeights,
    geom: &WindowGeometry,
) -> Result<(Tensor, Tensor)> {
    let strides = geom.pool_strides()?;
    let [m, n] = geom.tokens;
    let [hp, wp] = geom.pooled;
    let c = geom.dim;
    let k = POOL_KERNEL;
    let pad = (k / 2) as isize;
    let ker = weights.pool_kernel.data();
    let mut keys = Vec::with_capacity(geom.frames);
    let mut values = Vec::with_capacity(geom.frames);
    for frame in z.outer_slices() {
        let src = frame.data();
        let mut out = vec![0.0f32; hp * wp * c];
        for oy in 0..hp {
            for ox in 0..wp {
                let dst = &mut out[(oy * wp + ox) * c..][..c];
                for ky in 0..k {
                    let y = (oy * strides[0] + ky) as isize - pad;
                    if y < 0 || y >= m as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let x = (ox * strides[1] + kx) as isize - pad;
                        if x < 0 || x >= n as isize {
                            continue;
                        }
                        let s = &src[(y as usize * n + x as usize) * c..][..c];
                        let kk = &ker[(ky * k + kx) * c..][..c];
                        for ch in 0..c {
                            dst[ch] += s[ch] * kk[ch];
                        }
                    }
                }
            }
        }
        let pooled = Tensor::new([hp, wp, c], out)?;
        keys.push(linear(
            &pooled,
            &weights.pool_k_weight,
            &weights.pool_k_bias,
        )?);
        values.push(linear(
            &pooled,
            &weights.pool_v_weight,
            &weights.pool_v_bias,
        )?);
    }
    Ok((Tensor::stack(&keys)?, Tensor::stack(&values)?))
}

/// Projected token grids shared by every window of one layer.
struct Projections {
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    gk: Vec<f32>,
    gv: Vec<f32>,
}

/// One attention job: a window and the frames its queries and keys use.
struct WindowJob<'a> {
    row: usize,
    col: usize,
    query_frames: &'a [usize],
    kv_frames: &'a [usize],
    sparse: bool,
}

struct WindowResult {
    /// Flat token indices (into `[T, M, N]`) of the processed queries.
    slots: Vec<usize>,
    /// Output-projected attention, `[slots.len(), C_z]`.
    delta: Vec<f32>,
    macs: MacTally,
}

impl WindowGeometry {
    #[inline]
    fn token_index(&self, t: usize, y: usize, x: usize) -> usize {
        (t * self.tokens[0] + y) * self.tokens[1] + x
    }
}

fn gather_rows(src: &[f32], rows: &[usize], dim: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows.len() * dim);
    for &r in rows {
        out.extend_from_slice(&src[r * dim..(r + 1) * dim]);
    }
    out
}

/// Key/value rows of one window: `(is_global, index)` per slot, ordered by
/// frame and then by the enlarged-window raster.
fn kv_slots(geom: &WindowGeometry, row: usize, col: usize, frames: &[usize]) -> Vec<(bool, usize)> {
    let [m, n] = geom.tokens;
    let [h, w] = geom.window;
    let [hp, wp] = geom.pooled;
    let mut out = Vec::with_capacity(frames.len() * geom.kv_tokens_per_frame());
    for &t in frames {
        for a in 0..h + hp {
            for b in 0..w + wp {
                if a >= h && b >= w {
                    out.push((true, (t * hp + (a - h)) * wp + (b - w)));
                } else {
                    let y = (row * h + a) % m;
                    let x = (col * w + b) % n;
                    out.push((false, geom.token_index(t, y, x)));
                }
            }
        }
    }
    out
}

fn attend_window(
    job: &WindowJob<'_>,
    proj: &Projections,
    weights: &LayerWeights,
    geom: &WindowGeometry,
) -> WindowResult {
    let dim = geom.dim;
    let heads = weights.heads;
    let hd = dim / heads;
    let [h, w] = geom.window;

    let mut slots = Vec::with_capacity(job.query_frames.len() * h * w);
    for &t in job.query_frames {
        for a in 0..h {
            for b in 0..w {
                slots.push(geom.token_index(t, job.row * h + a, job.col * w + b));
            }
        }
    }
    let kv = kv_slots(geom, job.row, job.col, job.kv_frames);
    let (nq, nk) = (slots.len(), kv.len());

    let q = gather_rows(&proj.q, &slots, dim);
    let mut k = Vec::with_capacity(nk * dim);
    let mut v = Vec::with_capacity(nk * dim);
    for &(global, idx) in &kv {
        let (ks, vs) = if global {
            (&proj.gk, &proj.gv)
        } else {
            (&proj.k, &proj.v)
        };
        k.extend_from_slice(&ks[idx * dim..(idx + 1) * dim]);
        v.extend_from_slice(&vs[idx * dim..(idx + 1) * dim]);
    }

    let scale = 1.0 / (hd as f32).sqrt();
    let mut attn = vec![0.0f32; nq * dim];
    let mut qh = vec![0.0f32; nq * hd];
    let mut kh = vec![0.0f32; nk * hd];
    let mut vt = vec![0.0f32; hd * nk];
    let mut logits = vec![0.0f32; nq * nk];
    let mut oh = vec![0.0f32; nq * hd];
    for head in 0..heads {
        let off = head * hd;
        for r in 0..nq {
            qh[r * hd..(r + 1) * hd].copy_from_slice(&q[r * dim + off..r * dim + off + hd]);
        }
        for r in 0..nk {
            kh[r * hd..(r + 1) * hd].copy_from_slice(&k[r * dim + off..r * dim + off + hd]);
            for d in 0..hd {
                vt[d * nk + r] = v[r * dim + off + d];
            }
        }
        matmul_nt(&qh, &kh, hd, &mut logits);
        for row in logits.chunks_mut(nk) {
            row.iter_mut().for_each(|l| *l *= scale);
            softmax_in_place(row);
        }
        matmul_nt(&logits, &vt, nk, &mut oh);
        for r in 0..nq {
            attn[r * dim + off..r * dim + off + hd].copy_from_slice(&oh[r * hd..(r + 1) * hd]);
        }
    }

    let mut delta = vec![0.0f32; nq * dim];
    matmul_nt(&attn, weights.out_weight.data(), dim, &mut delta);
    let bias = weights.out_bias.data();
    for row in delta.chunks_mut(dim) {
        for (d, b) in row.iter_mut().zip(bias) {
            *d += b;
        }
    }

    let pair = (nq * nk * dim) as u64;
    let mut macs = MacTally {
        qk_logits: pair,
        attention_values: pair,
        output_projection: (nq * dim * dim) as u64,
        ..Default::default()
    };
    if job.sparse {
        macs.sparse_query_tokens = nq as u64;
    } else {
        macs.dense_query_tokens = nq as u64;
    }
    WindowResult { slots, delta, macs }
}

fn check_plan(plan: &SparsityPlan, geom: &WindowGeometry) -> Result<()> {
    let [m, n] = geom.windows();
    if plan.frames != geom.frames {
        return Err(Error::Plan(format!(
            "plan covers {} frames, tokens have {}",
            plan.frames, geom.frames
        )));
    }
    if (plan.mask.rows, plan.mask.cols) != (m, n) {
        return Err(Error::Plan(format!(
            "plan mask is {}x{}, token grid has {m}x{n} windows",
            plan.mask.rows, plan.mask.cols
        )));
    }
    let mut seen = vec![false; m * n];
    for wp in &plan.windows {
        if wp.row >= m || wp.col >= n {
            return Err(Error::Plan(format!(
                "window ({}, {}) outside {m}x{n}",
                wp.row, wp.col
            )));
        }
        if std::mem::replace(&mut seen[wp.row * n + wp.col], true) {
            return Err(Error::Plan(format!(
                "window ({}, {}) listed twice",
                wp.row, wp.col
            )));
        }
        if wp.query_frames.is_empty() || wp.kv_frames.is_empty() {
            return Err(Error::Plan(format!(
                "window ({}, {}) has no frames",
                wp.row, wp.col
            )));
        }
        for &t in wp.query_frames.iter().chain(&wp.kv_frames) {
            if t >= geom.frames {
                return Err(Error::Plan(format!("frame {t} out of range")));
            }
        }
        let mut q = wp.query_frames.clone();
        q.sort_unstable();
        q.dedup();
        if q.len() != wp.query_frames.len() {
            return Err(Error::Plan(format!(
                "window ({}, {}) repeats a query frame",
                wp.row, wp.col
            )));
        }
    }
    Ok(())
}

/// Attention half of the layer: `z + MSA(LN(z))` on every processed query
/// token. Selected windows attend from their query frames to their key/value
/// frames; all other windows run dense attention over every frame. Query
/// tokens of selected windows at unselected frames are returned untouched.
pub fn attention_stage(
    z: &Tensor,
    plan: &SparsityPlan,
    weights: &LayerWeights,
    config: &ModelConfig,
    tally: Option<&mut MacTally>,
) -> Result<Tensor> {
    let geom = WindowGeometry::from_tokens(z, config)?;
    let dim = geom.dim;
    if weights.dim() != dim || dim % weights.heads != 0 {
        return Err(Error::shape("attention_stage", &[weights.dim()], &[dim]));
    }
    check_plan(plan, &geom)?;

    let normed = layer_norm(z, &weights.norm1_gamma, &weights.norm1_beta, LN_EPS)?;
    let (gk, gv) = global_tokens(&normed, weights, &geom)?;
    let proj = Projections {
        q: linear(&normed, &weights.q_weight, &weights.q_bias)?.into_data(),
        k: linear(&normed, &weights.k_weight, &weights.k_bias)?.into_data(),
        v: linear(&normed, &weights.v_weight, &weights.v_bias)?.into_data(),
        gk: gk.into_data(),
        gv: gv.into_data(),
    };

    let [m, n] = geom.windows();
    let all_frames: Vec<usize> = (0..geom.frames).collect();
    let mut sparse_at = vec![None; m * n];
    for (idx, wp) in plan.windows.iter().enumerate() {
        sparse_at[wp.row * n + wp.col] = Some(idx);
    }
    let jobs: Vec<WindowJob<'_>> = (0..m * n)
        .map(|w| match sparse_at[w] {
            Some(idx) => {
                let wp = &plan.windows[idx];
                WindowJob {
                    row: wp.row,
                    col: wp.col,
                    query_frames: &wp.query_frames,
                    kv_frames: &wp.kv_frames,
                    sparse: true,
                }
            }
            None => WindowJob {
                row: w / n,
                col: w % n,
                query_frames: &all_frames,
                kv_frames: &all_frames,
                sparse: false,
            },
        })
        .collect();

    let results: Vec<WindowResult> = jobs
        .par_iter()
        .map(|job| attend_window(job, &proj, weights, &geom))
        .collect();

    let mut out = z.clone();
    let data = out.data_mut();
    let mut macs = MacTally::default();
    for r in &results {
        for (s, &slot) in r.slots.iter().enumerate() {
            let dst = &mut data[slot * dim..(slot + 1) * dim];
            for (d, a) in dst.iter_mut().zip(&r.delta[s * dim..(s + 1) * dim]) {
                *d += a;
            }
        }
        macs += r.macs;
    }

    if let Some(tally) = tally {
        let [hp, wp] = geom.pooled;
        let pooled = (geom.frames * hp * wp) as u64;
        let d = dim as u64;
        macs.qkv_projection = 3 * geom.token_count() as u64 * d * d;
        macs.global_tokens = pooled * (POOL_KERNEL * POOL_KERNEL) as u64 * d + 2 * pooled * d * d;
        *tally += macs;
    }
    Ok(out)
}

/// Feed-forward half of the layer: `x + FFN(LN(x))` on every token.
pub fn ffn_stage(
    x: &Tensor,
    weights: &LayerWeights,
    tally: Option<&mut MacTally>,
) -> Result<Tensor> {
    let normed = layer_norm(x, &weights.norm2_gamma, &weights.norm2_beta, LN_EPS)?;
    let hidden = linear(&normed, &weights.ffn1_weight, &weights.ffn1_bias)?.map(gelu);
    let update = linear(&hidden, &weights.ffn2_weight, &weights.ffn2_bias)?;
    let out: Vec<f32> = x
        .data()
        .iter()
        .zip(update.data())
        .map(|(a, b)| a + b)
        .collect();
    if let Some(tally) = tally {
        let tokens = (x.len() / weights.dim()) as u64;
        tally.ffn += 2 * tokens * (weights.dim() * weights.hidden()) as u64;
    }
    Tensor::new(x.shape(), out)
}

/// Full layer on a token grid `[T, M, N, C_z]`.
pub fn sparse_attention(
    z: &Tensor,
    plan: &SparsityPlan,
    weights: &LayerWeights,
    config: &ModelConfig,
    mut tally: Option<&mut MacTally>,
) -> Result<Tensor> {
    let mid = attention_stage(z, plan, weights, config, tally.as_deref_mut())?;
    ffn_stage(&mid, weights, tally)
}
