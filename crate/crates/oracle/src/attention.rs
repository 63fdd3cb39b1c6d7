//! Spatio-temporal window transformer over overlapping patch tokens,
//! computed densely with optional `-inf` masking.

use std::collections::HashMap;

use crate::conv::depthwise;
use crate::mirror;

/// `[H, W, C]` → `[M, N, p·p·C]` with `M = ceil(H / s)`; patch `(i, j)`
/// starts at `i·s - (p - s) / 2`, reflected at the borders.
pub fn soft_split(
    x: &[f64],
    h: usize,
    w: usize,
    c: usize,
    p: usize,
    s: usize,
) -> (Vec<f64>, usize, usize) {
    let m = h.div_ceil(s);
    let n = w.div_ceil(s);
    let off = ((p - s) / 2) as i64;
    let mut out = Vec::with_capacity(m * n * p * p * c);
    for i in 0..m {
        for j in 0..n {
            for dy in 0..p {
                for dx in 0..p {
                    let y = mirror((i * s) as i64 - off + dy as i64, h);
                    let xx = mirror((j * s) as i64 - off + dx as i64, w);
                    out.extend_from_slice(&x[(y * w + xx) * c..(y * w + xx + 1) * c]);
                }
            }
        }
    }
    (out, m, n)
}

/// Averages tokens back onto `[H, W, C]`, ignoring patch pixels that fall
/// outside the map.
pub fn soft_compose(z: &[f64], h: usize, w: usize, c: usize, p: usize, s: usize) -> Vec<f64> {
    let m = h.div_ceil(s);
    let n = w.div_ceil(s);
    let off = ((p - s) / 2) as i64;
    let mut sum = vec![0.0; h * w * c];
    let mut cnt = vec![0.0; h * w];
    for i in 0..m {
        for j in 0..n {
            for dy in 0..p {
                for dx in 0..p {
                    let y = (i * s) as i64 - off + dy as i64;
                    let xx = (j * s) as i64 - off + dx as i64;
                    if y < 0 || xx < 0 || y >= h as i64 || xx >= w as i64 {
                        continue;
                    }
                    let pix = y as usize * w + xx as usize;
                    cnt[pix] += 1.0;
                    let tok = ((i * n + j) * p * p + dy * p + dx) * c;
                    for ch in 0..c {
                        sum[pix * c + ch] += z[tok + ch];
                    }
                }
            }
        }
    }
    (0..h * w * c).map(|k| sum[k] / cnt[k / c]).collect()
}

/// Named layer weights (same names and layouts as the production crate:
/// linear weights are `[out, in]`).
pub struct LayerParams {
    pub heads: usize,
    pub dim: usize,
    pub hidden: usize,
    pub tensors: HashMap<String, Vec<f64>>,
}

impl LayerParams {
    fn get(&self, name: &str) -> &[f64] {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing layer tensor {name}"))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Geometry {
    pub t: usize,
    pub m: usize,
    pub n: usize,
    pub window: [usize; 2],
    pub pooled: [usize; 2],
}

fn linear(x: &[f64], wgt: &[f64], b: &[f64], d_in: usize, d_out: usize) -> Vec<f64> {
    let rows = x.len() / d_in;
    let mut out = vec![0.0; rows * d_out];
    for r in 0..rows {
        for o in 0..d_out {
            let mut acc = b[o];
            for i in 0..d_in {
                acc += wgt[o * d_in + i] * x[r * d_in + i];
            }
            out[r * d_out + o] = acc;
        }
    }
    out
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks(d).zip(out.chunks_mut(d)) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for i in 0..d {
            o[i] = (row[i] - mean) * inv * g[i] + b[i];
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

/// One layer: `z + MSA(LN(z))` on processed query tokens, then
/// `x + FFN(LN(x))` on all tokens.
///
/// For window `win` (row-major), a query at frame `tq` is processed when
/// `query(win, tq)`, and it may attend to the keys of frame `tk` when
/// `key(win, tq, tk)`; all other logits are `-inf`. Each frame contributes
/// its pooled global tokens and the `(h + h_p) × (w + w_p)` cyclic
/// neighbourhood of the window minus the bottom-right corner.
pub fn layer(
    z: &[f64],
    g: &Geometry,
    p: &LayerParams,
    query: &dyn Fn(usize, usize) -> bool,
    key: &dyn Fn(usize, usize, usize) -> bool,
) -> Vec<f64> {
    let d = p.dim;
    let tokens = g.t * g.m * g.n;
    let [h, w] = g.window;
    let [hp, wp] = g.pooled;
    let hd = d / p.heads;

    let zn = layer_norm(z, p.get("norm1_gamma"), p.get("norm1_beta"), d);
    let q = linear(&zn, p.get("q_weight"), p.get("q_bias"), d, d);
    let k = linear(&zn, p.get("k_weight"), p.get("k_bias"), d, d);
    let v = linear(&zn, p.get("v_weight"), p.get("v_bias"), d, d);

    let strides = [g.m / hp, g.n / wp];
    let mut gk = Vec::new();
    let mut gv = Vec::new();
    for t in 0..g.t {
        let frame = &zn[t * g.m * g.n * d..(t + 1) * g.m * g.n * d];
        let (pooled, ph, pw) = depthwise(frame, g.m, g.n, d, p.get("pool_kernel"), 3, strides, 1);
        assert_eq!((ph, pw), (hp, wp), "pooled grid");
        gk.extend(linear(
            &pooled,
            p.get("pool_k_weight"),
            p.get("pool_k_bias"),
            d,
            d,
        ));
        gv.extend(linear(
            &pooled,
            p.get("pool_v_weight"),
            p.get("pool_v_bias"),
            d,
            d,
        ));
    }

    let idx = |t: usize, y: usize, x: usize| (t * g.m + y) * g.n + x;
    let mut out = z.to_vec();
    let n_win = g.n / w;
    for wi in 0..g.m / h {
        for wj in 0..n_win {
            let win = wi * n_win + wj;
            // (frame, key row, value row) for every key, global tokens first.
            let mut keys: Vec<(usize, &[f64], &[f64])> = Vec::new();
            for tk in 0..g.t {
                for gi in 0..hp * wp {
                    let r = (tk * hp * wp + gi) * d;
                    keys.push((tk, &gk[r..r + d], &gv[r..r + d]));
                }
                for a in 0..h + hp {
                    for b in 0..w + wp {
                        if a >= h && b >= w {
                            continue;
                        }
                        let r = idx(tk, (wi * h + a) % g.m, (wj * w + b) % g.n) * d;
                        keys.push((tk, &k[r..r + d], &v[r..r + d]));
                    }
                }
            }
            for tq in 0..g.t {
                if !query(win, tq) {
                    continue;
                }
                for a in 0..h {
                    for b in 0..w {
                        let qi = idx(tq, wi * h + a, wj * w + b);
                        let qv = &q[qi * d..(qi + 1) * d];
                        let mut heads_out = vec![0.0; d];
                        for hh in 0..p.heads {
                            let lo = hh * hd;
                            let logits: Vec<f64> = keys
                                .iter()
                                .map(|(tk, kr, _)| {
                                    if key(win, tq, *tk) {
                                        (lo..lo + hd).map(|e| qv[e] * kr[e]).sum::<f64>()
                                            / (hd as f64).sqrt()
                                    } else {
                                        f64::NEG_INFINITY
                                    }
                                })
                                .collect();
                            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let ex: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                            let sum: f64 = ex.iter().sum();
                            for (e, (_, _, vr)) in ex.iter().zip(&keys) {
                                for c in lo..lo + hd {
                                    heads_out[c] += e / sum * vr[c];
                                }
                            }
                        }
                        let proj = linear(&heads_out, p.get("out_weight"), p.get("out_bias"), d, d);
                        for c in 0..d {
                            out[qi * d + c] += proj[c];
                        }
                    }
                }
            }
        }
    }

    let xn = layer_norm(&out, p.get("norm2_gamma"), p.get("norm2_beta"), d);
    let hid: Vec<f64> = linear(&xn, p.get("ffn1_weight"), p.get("ffn1_bias"), d, p.hidden)
        .into_iter()
        .map(gelu)
        .collect();
    let upd = linear(&hid, p.get("ffn2_weight"), p.get("ffn2_bias"), p.hidden, d);
    debug_assert_eq!(upd.len(), tokens * d);
    out.iter().zip(&upd).map(|(a, b)| a + b).collect()
}

/// Feature-level layer: soft split every frame of `[T, H, W, C]`, run
/// [`layer`], and fold back.
#[allow(clippy::too_many_arguments)]
pub fn feature_layer(
    x: &[f64],
    t: usize,
    h: usize,
    w: usize,
    c: usize,
    patch: usize,
    stride: usize,
    window: [usize; 2],
    pooled: [usize; 2],
    p: &LayerParams,
    query: &dyn Fn(usize, usize) -> bool,
    key: &dyn Fn(usize, usize, usize) -> bool,
) -> Vec<f64> {
    let mut z = Vec::new();
    let (mut m, mut n) = (0, 0);
    for f in x.chunks(h * w * c) {
        let (tok, mm, nn) = soft_split(f, h, w, c, patch, stride);
        z.extend(tok);
        (m, n) = (mm, nn);
    }
    let g = Geometry {
        t,
        m,
        n,
        window,
        pooled,
    };
    let y = layer(&z, &g, p, query, key);
    y.chunks(m * n * patch * patch * c)
        .flat_map(|f| soft_compose(f, h, w, c, patch, stride))
        .collect()
}
