//! Overlapping patch tokenization (soft split) and its averaging inverse.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mirror index into `0..len` without repeating the edge sample
/// (`-1 -> 1`, `len -> len - 2`). Offsets of any size fold periodically.
#[inline]
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Geometry of a `p × p`, stride-`s` patch grid over an `H × W` map.
///
/// The grid has `ceil(H / s) × ceil(W / s)` patches. Patch `(i, j)` has its
/// top-left corner at `(i·s - pad_top, j·s - pad_left)` with
/// `pad = floor((p - s) / 2)`; positions outside the map are reflected.
/// Every pixel is covered by at least one patch whenever `p ≥ s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch: usize,
    pub stride: usize,
    pub height: usize,
    pub width: usize,
    pub rows: usize,
    pub cols: usize,
    pub pad: usize,
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch: usize, stride: usize) -> Result<Self> {
        if patch == 0 || stride == 0 {
            return Err(Error::invalid(
                "PatchGrid",
                "patch and stride must be positive",
            ));
        }
        if patch < stride {
            return Err(Error::invalid(
                "PatchGrid",
                format!("patch {patch} < stride {stride} leaves gaps between patches"),
            ));
        }
        if height == 0 || width == 0 {
            return Err(Error::invalid("PatchGrid", "empty feature map"));
        }
        Ok(PatchGrid {
            patch,
            stride,
            height,
            width,
            rows: height.div_ceil(stride),
            cols: width.div_ceil(stride),
            pad: (patch - stride) / 2,
        })
    }

    /// Unclipped map coordinate of the first row (or column) of patch `i`.
    #[inline]
    pub fn origin(&self, i: usize) -> isize {
        (i * self.stride) as isize - self.pad as isize
    }
}

/// Reflect-pads an `[H, W, C]` map to `[H + bottom, W + right, C]`.
pub fn pad_reflect(x: &Tensor, bottom: usize, right: usize) -> Result<Tensor> {
    let (h, w, c) = x.dims3("pad_reflect")?;
    let (nh, nw) = (h + bottom, w + right);
    let src = x.data();
    let mut out = Vec::with_capacity(nh * nw * c);
    for y in 0..nh {
        let sy = reflect_index(y as isize, h);
        for xx in 0..nw {
            let sx = reflect_index(xx as isize, w);
            let base = (sy * w + sx) * c;
            out.extend_from_slice(&src[base..base + c]);
        }
    }
    Tensor::new([nh, nw, c], out)
}

/// Splits `[H, W, C]` into overlapping patches `[M, N, p·p·C]`, each patch
/// flattened in `(row, col, channel)` order.
pub fn soft_split(x: &Tensor, patch: usize, stride: usize) -> Result<Tensor> {
    let (h, w, c) = x.dims3("soft_split")?;
    let grid = PatchGrid::new(h, w, patch, stride)?;
    let src = x.data();
    let dim = patch * patch * c;
    let mut out = Vec::with_capacity(grid.rows * grid.cols * dim);
    for i in 0..grid.rows {
        for j in 0..grid.cols {
            for py in 0..patch {
                let sy = reflect_index(grid.origin(i) + py as isize, h);
                for px in 0..patch {
                    let sx = reflect_index(grid.origin(j) + px as isize, w);
                    let base = (sy * w + sx) * c;
                    out.extend_from_slice(&src[base..base + c]);
                }
            }
        }
    }
    Tensor::new([grid.rows, grid.cols, dim], out)
}

/// Folds patches back into an `[H, W, C]` map, averaging every pixel over
/// the patches that cover it. Contributions landing in the reflected border
/// are discarded.
pub fn soft_composition(
    patches: &Tensor,
    patch: usize,
    stride: usize,
    height: usize,
    width: usize,
) -> Result<Tensor> {
    let (m, n, dim) = patches.dims3("soft_composition")?;
    let grid = PatchGrid::new(height, width, patch, stride)?;
    if m != grid.rows || n != grid.cols || dim % (patch * patch) != 0 {
        return Err(Error::Geometry(format!(
            "patch grid {m}x{n}x{dim} does not fit a {height}x{width} map with p={patch}, s={stride} \
             (expected {}x{}x(p*p*C))",
            grid.rows, grid.cols
        )));
    }
    let c = dim / (patch * patch);
    // f64 accumulation keeps the split/compose round trip exact.
    let mut sum = vec![0.0f64; height * width * c];
    let mut count = vec![0u32; height * width];
    let src = patches.data();
    for i in 0..m {
        for j in 0..n {
            let base = (i * n + j) * dim;
            for py in 0..patch {
                let y = grid.origin(i) + py as isize;
                if y < 0 || y >= height as isize {
                    continue;
                }
                for px in 0..patch {
                    let x = grid.origin(j) + px as isize;
                    if x < 0 || x >= width as isize {
                        continue;
                    }
                    let pix = y as usize * width + x as usize;
                    count[pix] += 1;
                    let from = base + (py * patch + px) * c;
                    for ch in 0..c {
                        sum[pix * c + ch] += src[from + ch] as f64;
                    }
                }
            }
        }
    }
    let out = sum
        .iter()
        .enumerate()
        .map(|(k, s)| (s / count[k / c] as f64) as f32)
        .collect();
    Tensor::new([height, width, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_folds_without_edge_repeat() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn unit_patches_are_a_reshape() {
        let x = Tensor::from_fn([3, 5, 2], |i| (i[0] * 10 + i[1] * 2 + i[2]) as f32);
        let z = soft_split(&x, 1, 1).unwrap();
        assert_eq!(z.shape(), &[3, 5, 2]);
        assert_eq!(z.data(), x.data());
    }

    #[test]
    fn ramp_p4_s2_hand_computed() {
        // 4x4 ramp, value = 4*row + col. Grid is ceil(4/2) = 2 per axis with
        // one reflected row/col in front: patch origins at -1 and 1.
        let x = Tensor::from_fn([4, 4, 1], |i| (4 * i[0] + i[1]) as f32);
        let z = soft_split(&x, 4, 2).unwrap();
        assert_eq!(z.shape(), &[2, 2, 16]);
        let rows = [[1usize, 0, 1, 2], [1, 2, 3, 2]];
        for i in 0..2 {
            for j in 0..2 {
                let expected: Vec<f32> = rows[i]
                    .iter()
                    .flat_map(|&r| rows[j].iter().map(move |&c| (4 * r + c) as f32))
                    .collect();
                let at = (i * 2 + j) * 16;
                assert_eq!(
                    &z.data()[at..at + 16],
                    expected.as_slice(),
                    "patch ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn constant_input_gives_constant_tokens() {
        let z = soft_split(&Tensor::full([6, 7, 3], 0.25), 4, 2).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn split_rejects_patch_smaller_than_stride() {
        assert!(soft_split(&Tensor::zeros([4, 4, 1]), 1, 2).is_err());
    }

    #[test]
    fn non_overlapping_composition_tiles() {
        let x = Tensor::from_fn([4, 6, 2], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f32);
        let z = soft_split(&x, 2, 2).unwrap();
        assert_eq!(z.shape(), &[2, 3, 8]);
        assert_eq!(soft_composition(&z, 2, 2, 4, 6).unwrap(), x);
    }

    #[test]
    fn overlapping_patches_average() {
        // Two 2-wide patches with stride 1 over a 1x3 map: pixel 1 is shared.
        let grid = PatchGrid::new(1, 3, 2, 1).unwrap();
        assert_eq!((grid.rows, grid.cols, grid.pad), (1, 3, 0));
        // p=2 rows: origin 0 covers row 0 and row 1 (outside, dropped).
        let (a, b) = (3.0f32, 7.0f32);
        let mut data = vec![0.0f32; 3 * 4];
        // patch 0 covers cols 0,1; patch 1 covers cols 1,2; patch 2 covers col 2.
        data[0] = 1.0; // patch 0, (0,0)
        data[1] = a; // patch 0, (0,1) -> pixel 1
        data[4] = b; // patch 1, (0,0) -> pixel 1
        data[5] = 5.0; // patch 1, (0,1) -> pixel 2
        data[8] = 5.0; // patch 2, (0,0) -> pixel 2
        let z = Tensor::new([1, 3, 4], data).unwrap();
        let x = soft_composition(&z, 2, 1, 1, 3).unwrap();
        assert_eq!(x.data(), &[1.0, (a + b) / 2.0, 5.0]);
    }

    #[test]
    fn composition_rejects_bad_geometry() {
        let z = Tensor::zeros([3, 3, 16]);
        assert!(soft_composition(&z, 4, 2, 4, 4).is_err());
    }
}
