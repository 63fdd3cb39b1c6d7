//! Blur and sharp maps estimated from bidirectional optical flow.
//!
//! The unnormalized blur of frame `t` is the summed squared magnitude of its
//! flow towards the next frame and towards the previous frame. Maps are then
//! min-max normalized over the whole sequence, so the most displaced pixel
//! anywhere in the clip has blur 1 and the least displaced has blur 0.

use crate::error::{Error, Result};
use crate::ops::{pad_reflect, pool_on_grid, PatchGrid, PoolKind};
use crate::tensor::{Flow, Tensor};

/// Forward flows `O(t → t+1)` and backward flows `O(t+1 → t)` for a clip of
/// `T` frames; both lists hold `T - 1` fields of one geometry. Flows out of
/// the clip (`O(1 → 0)`, `O(T → T+1)`) are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSequence {
    forward: Vec<Flow>,
    backward: Vec<Flow>,
    height: usize,
    width: usize,
}

impl FlowSequence {
    pub fn new(forward: Vec<Flow>, backward: Vec<Flow>) -> Result<Self> {
        let first = forward.first().or(backward.first()).ok_or_else(|| {
            Error::invalid(
                "FlowSequence",
                "no flows given; use FlowSequence::zeros for single frames",
            )
        })?;
        let (height, width) = (first.height(), first.width());
        Self::with_geometry(forward, backward, height, width)
    }

    pub fn with_geometry(
        forward: Vec<Flow>,
        backward: Vec<Flow>,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if forward.len() != backward.len() {
            return Err(Error::invalid(
                "FlowSequence",
                format!(
                    "{} forward flows but {} backward flows",
                    forward.len(),
                    backward.len()
                ),
            ));
        }
        for f in forward.iter().chain(&backward) {
            if f.height() != height || f.width() != width {
                return Err(Error::shape(
                    "FlowSequence",
                    &[height, width, 2],
                    f.as_tensor().shape(),
                ));
            }
        }
        Ok(FlowSequence {
            forward,
            backward,
            height,
            width,
        })
    }

    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        let steps = frames.saturating_sub(1);
        FlowSequence {
            forward: vec![Flow::zeros(height, width); steps],
            backward: vec![Flow::zeros(height, width); steps],
            height,
            width,
        }
    }

    pub fn frames(&self) -> usize {
        self.forward.len() + 1
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn forward(&self) -> &[Flow] {
        &self.forward
    }

    pub fn backward(&self) -> &[Flow] {
        &self.backward
    }

    /// `O(t → t+1)` for 0-based `t`, `None` at the last frame.
    pub fn to_next(&self, t: usize) -> Option<&Flow> {
        self.forward.get(t)
    }

    /// `O(t → t-1)` for 0-based `t`, `None` at the first frame.
    pub fn to_previous(&self, t: usize) -> Option<&Flow> {
        t.checked_sub(1).and_then(|i| self.backward.get(i))
    }

    pub fn scaled(&self, factor: f32) -> FlowSequence {
        FlowSequence {
            forward: self.forward.iter().map(|f| f.scaled(factor)).collect(),
            backward: self.backward.iter().map(|f| f.scaled(factor)).collect(),
            height: self.height,
            width: self.width,
        }
    }
}

/// `B̂[t, y, x] = |O(t → t+1)|² + |O(t → t-1)|²`, shape `[T, H, W]`.
pub fn unnormalized_blur(flows: &FlowSequence) -> Tensor {
    let (t_len, h, w) = (flows.frames(), flows.height, flows.width);
    let mut out = vec![0.0f32; t_len * h * w];
    for (t, frame) in out.chunks_mut(h * w).enumerate() {
        for flow in [flows.to_next(t), flows.to_previous(t)]
            .into_iter()
            .flatten()
        {
            for (px, d) in frame.iter_mut().zip(flow.as_tensor().data().chunks(2)) {
                *px += d[0] * d[0] + d[1] * d[1];
            }
        }
    }
    Tensor::new([t_len, h, w], out).expect("sized from geometry")
}

/// Sequence-wide min-max normalization, returning `(B, A = 1 - B)`.
///
/// A constant input carries no blur evidence and maps to `B ≡ 0`, `A ≡ 1`.
pub fn normalize(bhat: &Tensor) -> Result<(Tensor, Tensor)> {
    if !bhat.is_finite() {
        return Err(Error::invalid(
            "normalize",
            "unnormalized blur must be finite",
        ));
    }
    let (lo, hi) = bhat
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let blur = if bhat.is_empty() || hi <= lo {
        Tensor::zeros(bhat.shape())
    } else {
        let range = hi - lo;
        bhat.map(|v| ((v - lo) / range).clamp(0.0, 1.0))
    };
    let sharp = blur.map(|b| 1.0 - b);
    Ok((blur, sharp))
}

/// Average-pools each frame of `[T, H, W]` over the soft-split patch grid,
/// giving `[T, M, N]` aligned with the token grid.
pub fn downsample(blur: &Tensor, grid: &PatchGrid) -> Result<Tensor> {
    blur.expect_rank("downsample", 3)?;
    let (h, w) = (blur.shape()[1], blur.shape()[2]);
    if (h, w) != (grid.height, grid.width) {
        return Err(Error::Geometry(format!(
            "blur map is {h}x{w} but the patch grid was built for {}x{}",
            grid.height, grid.width
        )));
    }
    let frames: Vec<Tensor> = blur
        .outer_slices()
        .map(|f| pool_on_grid(&f, grid, PoolKind::Avg))
        .collect::<Result<_>>()?;
    Tensor::stack(&frames)
}

/// Max of `[T, M, N]` over each non-overlapping `h × w` window: `[T, m, n]`.
pub fn window_levels(bdown: &Tensor, window: [usize; 2]) -> Result<Tensor> {
    bdown.expect_rank("window_levels", 3)?;
    let s = bdown.shape();
    let (t_len, m_tok, n_tok) = (s[0], s[1], s[2]);
    let [wh, ww] = window;
    if wh == 0 || ww == 0 || m_tok % wh != 0 || n_tok % ww != 0 {
        return Err(Error::Geometry(format!(
            "{m_tok}x{n_tok} token grid is not divisible into {wh}x{ww} windows"
        )));
    }
    let (m, n) = (m_tok / wh, n_tok / ww);
    let src = bdown.data();
    Ok(Tensor::from_fn([t_len, m, n], |i| {
        let mut best = f32::NEG_INFINITY;
        for a in 0..wh {
            for b in 0..ww {
                best = best.max(src[(i[0] * m_tok + i[1] * wh + a) * n_tok + i[2] * ww + b]);
            }
        }
        best
    }))
}

/// Blur diagnostics for one clip: full-resolution maps plus the
/// token-grid and window-level reductions consumed by the transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurMapSequence {
    /// `B̂`, `[T, H, W]`.
    pub unnormalized: Tensor,
    /// `B`, `[T, H, W]` in `[0, 1]`.
    pub blur: Tensor,
    /// `A = 1 - B`.
    pub sharp: Tensor,
    /// `B↓`, `[T, M, N]`.
    pub downsampled: Tensor,
    /// `U`, `[T, m, n]`.
    pub window_levels: Tensor,
    pub grid: PatchGrid,
    pub window: [usize; 2],
}

impl BlurMapSequence {
    pub fn estimate(flows: &FlowSequence, grid: &PatchGrid, window: [usize; 2]) -> Result<Self> {
        let bhat = unnormalized_blur(flows);
        let (blur, sharp) = normalize(&bhat)?;
        Self::from_maps(bhat, blur, sharp, grid, window)
    }

    /// Builds the reductions from already normalized maps. When the grid is
    /// larger than the maps (features padded to fit whole windows), the blur
    /// map is reflect-padded the same way before pooling.
    pub fn from_maps(
        unnormalized: Tensor,
        blur: Tensor,
        sharp: Tensor,
        grid: &PatchGrid,
        window: [usize; 2],
    ) -> Result<Self> {
        blur.expect_rank("BlurMapSequence", 3)?;
        let (t_len, h, w) = (blur.shape()[0], blur.shape()[1], blur.shape()[2]);
        if grid.height < h || grid.width < w {
            return Err(Error::Geometry(format!(
                "patch grid {}x{} is smaller than the {h}x{w} blur map",
                grid.height, grid.width
            )));
        }
        let padded = if (grid.height, grid.width) == (h, w) {
            blur.clone()
        } else {
            let frames: Vec<Tensor> = blur
                .outer_slices()
                .map(|f| {
                    let f = f.reshape([h, w, 1])?;
                    pad_reflect(&f, grid.height - h, grid.width - w)?
                        .reshape([grid.height, grid.width])
                })
                .collect::<Result<_>>()?;
            Tensor::stack(&frames)?
        };
        debug_assert_eq!(padded.outer(), t_len);
        let downsampled = downsample(&padded, grid)?;
        let window_levels = window_levels(&downsampled, window)?;
        Ok(BlurMapSequence {
            unnormalized,
            blur,
            sharp,
            downsampled,
            window_levels,
            grid: *grid,
            window,
        })
    }

    /// Treats `blur` as already normalized (`unnormalized` is set to it).
    pub fn from_blur(blur: Tensor, grid: &PatchGrid, window: [usize; 2]) -> Result<Self> {
        let sharp = blur.map(|b| 1.0 - b);
        Self::from_maps(blur.clone(), blur, sharp, grid, window)
    }

    pub fn frames(&self) -> usize {
        self.blur.outer()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_flows_give_zero_blur() {
        let b = unnormalized_blur(&FlowSequence::zeros(3, 4, 5));
        assert_eq!(b.shape(), &[3, 4, 5]);
        assert!(b.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_frame_boundary_case() {
        let flows = FlowSequence::new(
            vec![Flow::constant(2, 2, 3.0, 4.0)],
            vec![Flow::zeros(2, 2)],
        )
        .unwrap();
        let b = unnormalized_blur(&flows);
        assert!(b.slice_outer(0).data().iter().all(|&v| v == 25.0));
        assert!(b.slice_outer(1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalization_is_affine() {
        let bhat = Tensor::new([3, 1, 1], vec![0.0, 25.0, 100.0]).unwrap();
        let (b, a) = normalize(&bhat).unwrap();
        assert_eq!(b.data(), &[0.0, 0.25, 1.0]);
        assert_eq!(a.data(), &[1.0, 0.75, 0.0]);
    }

    #[test]
    fn constant_blur_is_degenerate() {
        let (b, a) = normalize(&Tensor::full([2, 3, 3], 7.0)).unwrap();
        assert!(b.data().iter().all(|&v| v == 0.0));
        assert!(a.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mismatched_flow_lists_error() {
        assert!(FlowSequence::new(vec![Flow::zeros(2, 2)], vec![]).is_err());
        assert!(FlowSequence::new(vec![Flow::zeros(2, 2)], vec![Flow::zeros(2, 3)]).is_err());
    }

    #[test]
    fn downsample_identity_and_constant() {
        let b = Tensor::from_fn([2, 5, 3], |i| (i[0] + i[1] * i[2]) as f32 * 0.05);
        let grid = PatchGrid::new(5, 3, 1, 1).unwrap();
        assert_eq!(downsample(&b, &grid).unwrap(), b);
        let grid = PatchGrid::new(8, 8, 4, 2).unwrap();
        let d = downsample(&Tensor::full([2, 8, 8], 0.6), &grid).unwrap();
        assert_eq!(d.shape(), &[2, 4, 4]);
        assert!(d.data().iter().all(|&v| (v - 0.6).abs() < 1e-7));
        assert!(downsample(&Tensor::zeros([1, 6, 8]), &grid).is_err());
    }

    #[test]
    fn window_levels_pick_window_max() {
        let mut d = Tensor::zeros([1, 4, 4]);
        // token (1, 2) lies in window (0, 1) for 2x2 windows
        d.data_mut()[4 + 2] = 1.0;
        let u = window_levels(&d, [2, 2]).unwrap();
        assert_eq!(u.data(), &[0.0, 1.0, 0.0, 0.0]);
        let whole = window_levels(&d, [4, 4]).unwrap();
        assert_eq!(whole.data(), &[1.0]);
        assert!(window_levels(&d, [3, 2]).is_err());
    }

    #[test]
    fn padded_grid_reflects_blur() {
        let flows = FlowSequence::new(
            vec![Flow::constant(6, 6, 1.0, 0.0)],
            vec![Flow::zeros(6, 6)],
        )
        .unwrap();
        let grid = PatchGrid::new(8, 8, 4, 2).unwrap();
        let seq = BlurMapSequence::estimate(&flows, &grid, [2, 2]).unwrap();
        assert_eq!(seq.blur.shape(), &[2, 6, 6]);
        assert_eq!(seq.downsampled.shape(), &[2, 4, 4]);
        assert_eq!(seq.window_levels.shape(), &[2, 2, 2]);
        assert!(seq
            .window_levels
            .slice_outer(0)
            .data()
            .iter()
            .all(|&v| v == 1.0));
        assert!(seq
            .window_levels
            .slice_outer(1)
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }
}
