use crate::error::{Error, Result};
use crate::ops::PatchGrid;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

fn valid_pool(
    x: &Tensor,
    kernel: usize,
    stride: usize,
    kind: PoolKind,
    op: &'static str,
) -> Result<Tensor> {
    x.expect_rank(op, 2)?;
    let (h, w) = (x.shape()[0], x.shape()[1]);
    if kernel == 0 || stride == 0 {
        return Err(Error::invalid(op, "kernel and stride must be positive"));
    }
    if kernel > h || kernel > w {
        return Err(Error::invalid(
            op,
            format!("kernel {kernel} exceeds the {h}x{w} input"),
        ));
    }
    let (m, n) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
    let src = x.data();
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            let mut acc = match kind {
                PoolKind::Avg => 0.0,
                PoolKind::Max => f32::NEG_INFINITY,
            };
            for y in i * stride..i * stride + kernel {
                for xx in j * stride..j * stride + kernel {
                    let v = src[y * w + xx];
                    match kind {
                        PoolKind::Avg => acc += v,
                        PoolKind::Max => acc = acc.max(v),
                    }
                }
            }
            if kind == PoolKind::Avg {
                acc /= (kernel * kernel) as f32;
            }
            out.push(acc);
        }
    }
    Tensor::new([m, n], out)
}

/// Mean over every `kernel × kernel` window that fits, stepping by `stride`.
pub fn avg_pool2d(x: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    valid_pool(x, kernel, stride, PoolKind::Avg, "avg_pool2d")
}

pub fn max_pool2d(x: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    valid_pool(x, kernel, stride, PoolKind::Max, "max_pool2d")
}

/// Pools an `[H, W]` map over the windows of a soft-split patch grid.
///
/// Windows are truncated to the pixels inside the map; the mean is taken
/// over the actual count.
pub fn pool_on_grid(x: &Tensor, grid: &PatchGrid, kind: PoolKind) -> Result<Tensor> {
    x.expect_rank("pool_on_grid", 2)?;
    if x.shape() != [grid.height, grid.width] {
        return Err(Error::shape(
            "pool_on_grid",
            &[grid.height, grid.width],
            x.shape(),
        ));
    }
    let (h, w) = (grid.height as isize, grid.width as isize);
    let src = x.data();
    let mut out = Vec::with_capacity(grid.rows * grid.cols);
    for i in 0..grid.rows {
        let y0 = grid.origin(i).max(0);
        let y1 = (grid.origin(i) + grid.patch as isize).min(h);
        for j in 0..grid.cols {
            let x0 = grid.origin(j).max(0);
            let x1 = (grid.origin(j) + grid.patch as isize).min(w);
            let mut acc = match kind {
                PoolKind::Avg => 0.0f32,
                PoolKind::Max => f32::NEG_INFINITY,
            };
            for y in y0..y1 {
                for xx in x0..x1 {
                    let v = src[(y * w + xx) as usize];
                    match kind {
                        PoolKind::Avg => acc += v,
                        PoolKind::Max => acc = acc.max(v),
                    }
                }
            }
            if kind == PoolKind::Avg {
                acc /= ((y1 - y0) * (x1 - x0)) as f32;
            }
            out.push(acc);
        }
    }
    Tensor::new([grid.rows, grid.cols], out)
}
