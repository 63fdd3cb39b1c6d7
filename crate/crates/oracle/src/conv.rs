//! Convolutions on `[H, W, C]` maps with PyTorch-layout weights
//! `[C_out, C_in, k, k]`.

use crate::bilinear;

/// Direct convolution with zero padding. Returns `(out, H_out, W_out)`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    h: usize,
    w: usize,
    c_in: usize,
    weight: &[f64],
    bias: Option<&[f64]>,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; ho * wo * c_out];
    for oy in 0..ho {
        for ox in 0..wo {
            for co in 0..c_out {
                let mut acc = bias.map_or(0.0, |b| b[co]);
                for ci in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = (oy * stride + ky) as i64 - pad as i64;
                            let xx = (ox * stride + kx) as i64 - pad as i64;
                            if y < 0 || xx < 0 || y >= h as i64 || xx >= w as i64 {
                                continue;
                            }
                            let v = x[((y as usize) * w + xx as usize) * c_in + ci];
                            acc += v * weight[((co * c_in + ci) * k + ky) * k + kx];
                        }
                    }
                }
                out[(oy * wo + ox) * c_out + co] = acc;
            }
        }
    }
    (out, ho, wo)
}

/// Depthwise convolution with kernels `[k, k, C]`, zero padding `pad` and
/// separate row/column strides.
#[allow(clippy::too_many_arguments)]
pub fn depthwise(
    x: &[f64],
    h: usize,
    w: usize,
    c: usize,
    kernels: &[f64],
    k: usize,
    strides: [usize; 2],
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * pad - k) / strides[0] + 1;
    let wo = (w + 2 * pad - k) / strides[1] + 1;
    let mut out = vec![0.0; ho * wo * c];
    for oy in 0..ho {
        for ox in 0..wo {
            for ch in 0..c {
                let mut acc = 0.0;
                for ky in 0..k {
                    for kx in 0..k {
                        let y = (oy * strides[0] + ky) as i64 - pad as i64;
                        let xx = (ox * strides[1] + kx) as i64 - pad as i64;
                        if y >= 0 && xx >= 0 && y < h as i64 && xx < w as i64 {
                            acc += x[((y as usize) * w + xx as usize) * c + ch]
                                * kernels[(ky * k + kx) * c + ch];
                        }
                    }
                }
                out[(oy * wo + ox) * c + ch] = acc;
            }
        }
    }
    (out, ho, wo)
}

/// Modulated deformable conv, stride 1, padding `k / 2`, no bias. Offsets
/// are `[H, W, G, k·k, 2]` as `(dy, dx)`, masks `[H, W, G, k·k]`.
#[allow(clippy::too_many_arguments)]
pub fn deform_conv2d(
    x: &[f64],
    h: usize,
    w: usize,
    c_in: usize,
    offsets: &[f64],
    mask: &[f64],
    weight: &[f64],
    c_out: usize,
    k: usize,
    groups: usize,
) -> Vec<f64> {
    let per = c_in / groups;
    let half = (k / 2) as f64;
    let mut out = vec![0.0; h * w * c_out];
    for y in 0..h {
        for xx in 0..w {
            for co in 0..c_out {
                let mut acc = 0.0;
                for ci in 0..c_in {
                    let g = ci / per;
                    for ky in 0..k {
                        for kx in 0..k {
                            let tap = ky * k + kx;
                            let o = ((y * w + xx) * groups + g) * k * k + tap;
                            let sy = y as f64 - half + ky as f64 + offsets[2 * o];
                            let sx = xx as f64 - half + kx as f64 + offsets[2 * o + 1];
                            let sample = bilinear(x, h, w, c_in, ci, sy, sx);
                            acc += mask[o] * sample * weight[((co * c_in + ci) * k + ky) * k + kx];
                        }
                    }
                }
                out[(y * w + xx) * c_out + co] = acc;
            }
        }
    }
    out
}

pub fn upsample2x(x: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; 4 * h * w * c];
    for y in 0..2 * h {
        for xx in 0..2 * w {
            for ch in 0..c {
                out[(y * 2 * w + xx) * c + ch] = x[((y / 2) * w + xx / 2) * c + ch];
            }
        }
    }
    out
}

pub fn lrelu(v: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        0.1 * v
    }
}

/// Stand-in encoder: two 3×3 stride-2 convs, each followed by leaky ReLU.
#[allow(clippy::too_many_arguments)]
pub fn encode_frame(
    frame: &[f64],
    h: usize,
    w: usize,
    w1: &[f64],
    b1: &[f64],
    w2: &[f64],
    b2: &[f64],
    c: usize,
) -> Vec<f64> {
    let (a, h1, w1o) = conv2d(frame, h, w, 3, w1, Some(b1), c, 3, 2, 1);
    let a: Vec<f64> = a.into_iter().map(lrelu).collect();
    let (b, _, _) = conv2d(&a, h1, w1o, c, w2, Some(b2), c, 3, 2, 1);
    b.into_iter().map(lrelu).collect()
}

/// Stand-in decoder: `clamp(input + conv(up(lrelu(conv(up(f))))), 0, 1)`.
#[allow(clippy::too_many_arguments)]
pub fn decode_frame(
    feat: &[f64],
    fh: usize,
    fw: usize,
    c: usize,
    input: &[f64],
    w1: &[f64],
    b1: &[f64],
    w2: &[f64],
    b2: &[f64],
) -> Vec<f64> {
    let up = upsample2x(feat, fh, fw, c);
    let (a, ah, aw) = conv2d(&up, 2 * fh, 2 * fw, c, w1, Some(b1), c, 3, 1, 1);
    let a: Vec<f64> = a.into_iter().map(lrelu).collect();
    let up = upsample2x(&a, ah, aw, c);
    let (r, _, _) = conv2d(&up, 2 * ah, 2 * aw, c, w2, Some(b2), 3, 3, 1, 1);
    input
        .iter()
        .zip(&r)
        .map(|(a, b)| (a + b).clamp(0.0, 1.0))
        .collect()
}
