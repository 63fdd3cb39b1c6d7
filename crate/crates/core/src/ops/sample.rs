use crate::error::{Error, Result};
use crate::tensor::{Flow, Tensor};

/// Up to four in-bounds bilinear taps around a fractional sample position.
///
/// Taps that fall outside the image or carry zero weight are dropped, which
/// is what makes integer-position sampling reproduce the source value
/// bit-exactly (zero padding outside).
#[derive(Debug, Clone, Copy)]
pub(crate) struct BilinearTaps {
    pixel: [usize; 4],
    weight: [f32; 4],
    len: usize,
}

impl BilinearTaps {
    #[inline]
    pub(crate) fn new(height: usize, width: usize, y: f32, x: f32) -> Self {
        let mut taps = BilinearTaps {
            pixel: [0; 4],
            weight: [0.0; 4],
            len: 0,
        };
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = y - y0;
        let fx = x - x0;
        let (y0, x0) = (y0 as isize, x0 as isize);
        let rows = [(y0, 1.0 - fy), (y0 + 1, fy)];
        let cols = [(x0, 1.0 - fx), (x0 + 1, fx)];
        for &(yy, wy) in &rows {
            if wy == 0.0 || yy < 0 || yy >= height as isize {
                continue;
            }
            for &(xx, wx) in &cols {
                if wx == 0.0 || xx < 0 || xx >= width as isize {
                    continue;
                }
                taps.pixel[taps.len] = yy as usize * width + xx as usize;
                taps.weight[taps.len] = wy * wx;
                taps.len += 1;
            }
        }
        taps
    }

    /// Interpolated value of `channel` in an `[H, W, C]` buffer.
    #[inline]
    pub(crate) fn sample(&self, data: &[f32], channels: usize, channel: usize) -> f32 {
        if self.len == 0 {
            return 0.0;
        }
        let mut acc = self.weight[0] * data[self.pixel[0] * channels + channel];
        for k in 1..self.len {
            acc += self.weight[k] * data[self.pixel[k] * channels + channel];
        }
        acc
    }
}

/// Bilinear sample of `feature[.., .., channel]` at fractional `(y, x)`,
/// zero outside the image.
pub fn bilinear_sample(feature: &Tensor, y: f32, x: f32, channel: usize) -> Result<f32> {
    let (h, w, c) = feature.dims3("bilinear_sample")?;
    if channel >= c {
        return Err(Error::invalid(
            "bilinear_sample",
            format!("channel {channel} out of range for {c} channels"),
        ));
    }
    Ok(BilinearTaps::new(h, w, y, x).sample(feature.data(), c, channel))
}

/// Samples `feature` at `(x + u, y + v)` for every output pixel.
pub fn backward_warp(feature: &Tensor, flow: &Flow) -> Result<Tensor> {
    let (h, w, c) = feature.dims3("backward_warp")?;
    if flow.height() != h || flow.width() != w {
        return Err(Error::shape(
            "backward_warp",
            &[h, w, 2],
            flow.as_tensor().shape(),
        ));
    }
    let src = feature.data();
    let mut out = vec![0.0f32; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.at(y, x);
            let taps = BilinearTaps::new(h, w, y as f32 + v, x as f32 + u);
            let dst = &mut out[(y * w + x) * c..(y * w + x + 1) * c];
            for (ch, o) in dst.iter_mut().enumerate() {
                *o = taps.sample(src, c, ch);
            }
        }
    }
    Tensor::new([h, w, c], out)
}
