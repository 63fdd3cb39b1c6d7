use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ops::dense::dot;
use crate::ops::BilinearTaps;
use crate::tensor::Tensor;

/// Reorders `[C_out, C_in, k, k]` weights to `[C_out, k, k, C_in]` so each
/// output channel is one contiguous row matching the gathered patch layout.
fn weight_rows(weight: &Tensor) -> Vec<f32> {
    let s = weight.shape();
    let (c_out, c_in, k) = (s[0], s[1], s[2]);
    let w = weight.data();
    let mut out = Vec::with_capacity(w.len());
    for o in 0..c_out {
        for ky in 0..k {
            for kx in 0..k {
                for c in 0..c_in {
                    out.push(w[((o * c_in + c) * k + ky) * k + kx]);
                }
            }
        }
    }
    out
}

fn check_weight(op: &'static str, weight: &Tensor, c_in: usize) -> Result<(usize, usize)> {
    weight.expect_rank(op, 4)?;
    let s = weight.shape();
    if s[1] != c_in || s[2] != s[3] {
        return Err(Error::shape(op, &[s[0], c_in, s[2], s[2]], s));
    }
    Ok((s[0], s[2]))
}

/// Plain 2-D convolution of `[H, W, C_in]` with zero padding.
pub fn conv2d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (h, w, c_in) = x.dims3("conv2d")?;
    let (c_out, k) = check_weight("conv2d", weight, c_in)?;
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::shape("conv2d", &[c_out], b.shape()));
        }
    }
    if stride == 0 || h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::invalid(
            "conv2d",
            format!("kernel {k} with padding {padding} and stride {stride} does not fit {h}x{w}"),
        ));
    }
    let ho = (h + 2 * padding - k) / stride + 1;
    let wo = (w + 2 * padding - k) / stride + 1;
    let rows = weight_rows(weight);
    let src = x.data();
    let patch_len = k * k * c_in;
    let mut out = vec![0.0f32; ho * wo * c_out];
    out.par_chunks_mut(wo * c_out)
        .enumerate()
        .for_each(|(oy, line)| {
            let mut patch = vec![0.0f32; patch_len];
            for ox in 0..wo {
                for ky in 0..k {
                    let y = (oy * stride + ky) as isize - padding as isize;
                    for kx in 0..k {
                        let xx = (ox * stride + kx) as isize - padding as isize;
                        let dst = &mut patch[(ky * k + kx) * c_in..(ky * k + kx + 1) * c_in];
                        if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                            dst.fill(0.0);
                        } else {
                            let base = (y as usize * w + xx as usize) * c_in;
                            dst.copy_from_slice(&src[base..base + c_in]);
                        }
                    }
                }
                let o = &mut line[ox * c_out..(ox + 1) * c_out];
                for (co, v) in o.iter_mut().enumerate() {
                    *v = dot(&patch, &rows[co * patch_len..(co + 1) * patch_len]);
                    if let Some(b) = bias {
                        *v += b.data()[co];
                    }
                }
            }
        });
    Tensor::new([ho, wo, c_out], out)
}

/// Depthwise convolution with per-channel `[k, k, C]` kernels.
///
/// Stride 1 zero-pads by `k / 2` (same size output); larger strides use
/// valid windows only.
pub fn depthwise_conv2d(x: &Tensor, kernels: &Tensor, stride: usize) -> Result<Tensor> {
    let (h, w, c) = x.dims3("depthwise_conv2d")?;
    let (k, k2, kc) = kernels.dims3("depthwise_conv2d")?;
    if k != k2 || kc != c {
        return Err(Error::shape(
            "depthwise_conv2d",
            &[k, k, c],
            kernels.shape(),
        ));
    }
    if k % 2 == 0 || stride == 0 {
        return Err(Error::invalid(
            "depthwise_conv2d",
            format!("kernel size must be odd and stride positive (k={k}, stride={stride})"),
        ));
    }
    let pad = if stride == 1 { k / 2 } else { 0 };
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::invalid(
            "depthwise_conv2d",
            format!("kernel {k} does not fit a {h}x{w} input at stride {stride}"),
        ));
    }
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let (src, ker) = (x.data(), kernels.data());
    let mut out = vec![0.0f32; ho * wo * c];
    for oy in 0..ho {
        for ox in 0..wo {
            let dst = &mut out[(oy * wo + ox) * c..(oy * wo + ox + 1) * c];
            for ky in 0..k {
                let y = (oy * stride + ky) as isize - pad as isize;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let xx = (ox * stride + kx) as isize - pad as isize;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let s = &src[(y as usize * w + xx as usize) * c..][..c];
                    let kk = &ker[(ky * k + kx) * c..][..c];
                    for ch in 0..c {
                        dst[ch] += s[ch] * kk[ch];
                    }
                }
            }
        }
    }
    Tensor::new([ho, wo, c], out)
}

/// Modulated deformable convolution (stride 1, zero padding `k / 2`).
///
/// Input channels are split into `groups` equal groups, each with its own
/// sampling offsets and modulation mask per kernel tap:
/// `offsets[y, x, 2·(g·k·k + tap)]` is the vertical and `+1` the horizontal
/// displacement, `mask[y, x, g·k·k + tap]` the modulation scalar. Each tap
/// is sampled bilinearly (zero outside), scaled by its mask, then the usual
/// convolution sum applies. The mask is not clamped.
pub fn deform_conv2d(
    x: &Tensor,
    offsets: &Tensor,
    mask: &Tensor,
    weight: &Tensor,
    groups: usize,
) -> Result<Tensor> {
    let (h, w, c_in) = x.dims3("deform_conv2d")?;
    let (c_out, k) = check_weight("deform_conv2d", weight, c_in)?;
    if groups == 0 || c_in % groups != 0 {
        return Err(Error::invalid(
            "deform_conv2d",
            format!("{c_in} input channels cannot be split into {groups} groups"),
        ));
    }
    let taps = k * k;
    if offsets.shape() != [h, w, 2 * taps * groups] {
        return Err(Error::shape(
            "deform_conv2d",
            &[h, w, 2 * taps * groups],
            offsets.shape(),
        ));
    }
    if mask.shape() != [h, w, taps * groups] {
        return Err(Error::shape(
            "deform_conv2d",
            &[h, w, taps * groups],
            mask.shape(),
        ));
    }
    let per_group = c_in / groups;
    let half = (k / 2) as f32;
    let rows = weight_rows(weight);
    let (src, off, msk) = (x.data(), offsets.data(), mask.data());
    let patch_len = taps * c_in;
    let mut out = vec![0.0f32; h * w * c_out];
    out.par_chunks_mut(w * c_out)
        .enumerate()
        .for_each(|(y, line)| {
            let mut patch = vec![0.0f32; patch_len];
            for xx in 0..w {
                let pix = y * w + xx;
                for g in 0..groups {
                    for ky in 0..k {
                        for kx in 0..k {
                            let tap = ky * k + kx;
                            let o = (pix * groups + g) * taps + tap;
                            let (dy, dx) = (off[2 * o], off[2 * o + 1]);
                            let m = msk[o];
                            let sy = y as f32 + ky as f32 - half + dy;
                            let sx = xx as f32 + kx as f32 - half + dx;
                            let bt = BilinearTaps::new(h, w, sy, sx);
                            let dst = &mut patch[tap * c_in + g * per_group..][..per_group];
                            for (i, d) in dst.iter_mut().enumerate() {
                                *d = m * bt.sample(src, c_in, g * per_group + i);
                            }
                        }
                    }
                }
                let o = &mut line[xx * c_out..(xx + 1) * c_out];
                for (co, v) in o.iter_mut().enumerate() {
                    *v = dot(&patch, &rows[co * patch_len..(co + 1) * patch_len]);
                }
            }
        });
    Tensor::new([h, w, c_out], out)
}

/// Nearest-neighbour ×2 upsampling of `[H, W, C]`.
pub fn upsample_nearest2x(x: &Tensor) -> Result<Tensor> {
    let (h, w, c) = x.dims3("upsample_nearest2x")?;
    let src = x.data();
    let mut out = Vec::with_capacity(4 * h * w * c);
    for y in 0..2 * h {
        for xx in 0..2 * w {
            let base = ((y / 2) * w + xx / 2) * c;
            out.extend_from_slice(&src[base..base + c]);
        }
    }
    Tensor::new([2 * h, 2 * w, c], out)
}
