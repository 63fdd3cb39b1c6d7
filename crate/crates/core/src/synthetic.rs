//! Synthetic flows and videos so every check can run without external data.

use serde::{Deserialize, Serialize};

use crate::blur_map::FlowSequence;
use crate::error::{Error, Result};
use crate::tensor::{Flow, Tensor};

/// A textured box translating at constant velocity over a static background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovingBox {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// `[x, y, w, h]` at frame 0, in pixels.
    #[serde(rename = "box")]
    pub rect: [f32; 4],
    /// Pixels per frame, `[vx, vy]`.
    pub velocity: [f32; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticFlowSpec {
    Constant {
        u: f32,
        v: f32,
        frames: usize,
        height: usize,
        width: usize,
    },
    MovingBox(MovingBox),
}

impl SyntheticFlowSpec {
    pub fn frames(&self) -> usize {
        match self {
            SyntheticFlowSpec::Constant { frames, .. } => *frames,
            SyntheticFlowSpec::MovingBox(b) => b.frames,
        }
    }

    pub fn generate(&self) -> Result<FlowSequence> {
        match *self {
            SyntheticFlowSpec::Constant {
                u,
                v,
                frames,
                height,
                width,
            } => {
                check_geometry(frames, height, width)?;
                let n = frames - 1;
                FlowSequence::with_geometry(
                    vec![Flow::constant(height, width, u, v); n],
                    vec![Flow::constant(height, width, -u, -v); n],
                    height,
                    width,
                )
            }
            SyntheticFlowSpec::MovingBox(b) => b.flows(),
        }
    }
}

fn check_geometry(frames: usize, height: usize, width: usize) -> Result<()> {
    if frames == 0 || height == 0 || width == 0 {
        return Err(Error::invalid(
            "synthetic",
            format!("empty geometry {frames}x{height}x{width}"),
        ));
    }
    Ok(())
}

impl MovingBox {
    /// Box rectangle at (possibly fractional) time `t`.
    fn rect_at(&self, t: f32) -> [f32; 4] {
        let [x, y, w, h] = self.rect;
        [x + self.velocity[0] * t, y + self.velocity[1] * t, w, h]
    }

    fn contains(rect: [f32; 4], px: f32, py: f32) -> bool {
        px >= rect[0] && px < rect[0] + rect[2] && py >= rect[1] && py < rect[1] + rect[3]
    }

    fn box_flow(&self, t: usize, u: f32, v: f32) -> Flow {
        let rect = self.rect_at(t as f32);
        let field = Tensor::from_fn([self.height, self.width, 2], |i| {
            let inside = Self::contains(rect, i[1] as f32 + 0.5, i[0] as f32 + 0.5);
            match (inside, i[2]) {
                (false, _) => 0.0,
                (true, 0) => u,
                (true, _) => v,
            }
        });
        Flow::new(field).expect("two channels")
    }

    /// Forward flow carries the box velocity on the box at frame `t`;
    /// backward flow carries its negation on the box at frame `t + 1`.
    pub fn flows(&self) -> Result<FlowSequence> {
        check_geometry(self.frames, self.height, self.width)?;
        let [vx, vy] = self.velocity;
        let n = self.frames - 1;
        let forward = (0..n).map(|t| self.box_flow(t, vx, vy)).collect();
        let backward = (0..n).map(|t| self.box_flow(t + 1, -vx, -vy)).collect();
        FlowSequence::with_geometry(forward, backward, self.height, self.width)
    }

    /// The same scene at `1 / factor` resolution.
    pub fn downscaled(&self, factor: usize) -> Result<MovingBox> {
        if factor == 0 || !self.height.is_multiple_of(factor) || !self.width.is_multiple_of(factor)
        {
            return Err(Error::invalid(
                "MovingBox::downscaled",
                format!(
                    "{}x{} is not divisible by {factor}",
                    self.height, self.width
                ),
            ));
        }
        let f = factor as f32;
        Ok(MovingBox {
            frames: self.frames,
            height: self.height / factor,
            width: self.width / factor,
            rect: self.rect.map(|c| c / f),
            velocity: self.velocity.map(|c| c / f),
        })
    }

    /// Renders `[T, H, W, 3]` in `[0, 1]`: a smooth background and a
    /// checkered box, averaged over the exposure so the box smears along its
    /// motion.
    pub fn render(&self) -> Result<Tensor> {
        check_geometry(self.frames, self.height, self.width)?;
        const EXPOSURE_SAMPLES: usize = 7;
        let (h, w) = (self.height as f32, self.width as f32);
        let pixel = |t: f32, px: f32, py: f32, ch: usize| -> f32 {
            let rect = self.rect_at(t);
            if Self::contains(rect, px, py) {
                let cx = ((px - rect[0]) / 4.0).floor() as i64;
                let cy = ((py - rect[1]) / 4.0).floor() as i64;
                let on = (cx + cy).rem_euclid(2) == 0;
                let base = if on { 0.9 } else { 0.15 };
                base + 0.05 * ch as f32
            } else {
                let gx = px / w;
                let gy = py / h;
                match ch {
                    0 => 0.25 + 0.5 * gx,
                    1 => 0.25 + 0.5 * gy,
                    _ => 0.5 + 0.25 * ((gx + gy) * std::f32::consts::PI).sin(),
                }
            }
        };
        Ok(Tensor::from_fn(
            [self.frames, self.height, self.width, 3],
            |i| {
                let (px, py) = (i[2] as f32 + 0.5, i[1] as f32 + 0.5);
                let mut acc = 0.0;
                for s in 0..EXPOSURE_SAMPLES {
                    let dt = (s as f32 + 0.5) / EXPOSURE_SAMPLES as f32 - 0.5;
                    acc += pixel(i[0] as f32 + dt, px, py, i[3]);
                }
                (acc / EXPOSURE_SAMPLES as f32).clamp(0.0, 1.0)
            },
        ))
    }
}
