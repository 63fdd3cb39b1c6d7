//! Blur-driven window and frame selection.

use serde::{Deserialize, Serialize};

use crate::config::{AttentionMode, Parity};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binary `m × n` window mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowMask {
    pub rows: usize,
    pub cols: usize,
    pub selected: Vec<bool>,
}

impl WindowMask {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.selected[i * self.cols + j]
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }
}

/// Frames chosen for one blurry window. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub row: usize,
    pub col: usize,
    /// Blurriest frames first.
    pub query_frames: Vec<usize>,
    /// Sharpest frames first.
    pub kv_frames: Vec<usize>,
}

/// The selection one transformer layer used. Windows listed in `windows`
/// take the sparse path; every other window takes dense attention over all
/// frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityPlan {
    pub mode: AttentionMode,
    pub frames: usize,
    /// Blur threshold; `None` for dense plans.
    pub theta: Option<f32>,
    pub k_q: usize,
    pub k_kv: usize,
    pub parity: Parity,
    pub mask: WindowMask,
    pub windows: Vec<WindowPlan>,
}

impl SparsityPlan {
    /// Plan that routes every window through dense attention.
    pub fn dense(frames: usize, rows: usize, cols: usize) -> Self {
        SparsityPlan {
            mode: AttentionMode::Dense,
            frames,
            theta: None,
            k_q: frames,
            k_kv: frames,
            parity: Parity::Off,
            mask: WindowMask {
                rows,
                cols,
                selected: vec![false; rows * cols],
            },
            windows: Vec::new(),
        }
    }

    pub fn selected_windows(&self) -> usize {
        self.windows.len()
    }

    /// Query tokens routed through the sparse path for `h × w` windows.
    pub fn sparse_query_tokens(&self, window: [usize; 2]) -> usize {
        self.windows
            .iter()
            .map(|w| w.query_frames.len())
            .sum::<usize>()
            * window[0]
            * window[1]
    }
}

fn levels_dims(u: &Tensor) -> Result<(usize, usize, usize)> {
    u.expect_rank("window levels", 3)?;
    Ok((u.shape()[0], u.shape()[1], u.shape()[2]))
}

/// `S[i, j] = 1` iff some frame has `U[t, i, j] ≥ θ`.
pub fn spatial_mask(u: &Tensor, theta: f32) -> Result<WindowMask> {
    let (t_len, m, n) = levels_dims(u)?;
    let d = u.data();
    let selected = (0..m * n)
        .map(|w| (0..t_len).any(|t| d[t * m * n + w] >= theta))
        .collect();
    Ok(WindowMask {
        rows: m,
        cols: n,
        selected,
    })
}

/// Indices of the `k` largest `scores`, ties to the smaller index.
fn top_k(scores: &[(usize, f32)], k: usize) -> Vec<usize> {
    let mut ranked = scores.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(i, _)| i).collect()
}

fn column(u: &Tensor, i: usize, j: usize) -> Vec<f32> {
    let (t_len, m, n) = (u.shape()[0], u.shape()[1], u.shape()[2]);
    (0..t_len).map(|t| u.data()[(t * m + i) * n + j]).collect()
}

/// For each selected window (row-major), the `min(k_q, T)` blurriest frames.
pub fn select_query_frames(
    u: &Tensor,
    mask: &WindowMask,
    k_q: usize,
) -> Result<Vec<(usize, usize, Vec<usize>)>> {
    let (_, m, n) = levels_dims(u)?;
    check_mask(mask, m, n)?;
    let mut out = Vec::new();
    for i in 0..m {
        for j in 0..n {
            if !mask.get(i, j) {
                continue;
            }
            let scores: Vec<(usize, f32)> = column(u, i, j).into_iter().enumerate().collect();
            out.push((i, j, top_k(&scores, k_q)));
        }
    }
    Ok(out)
}

/// For each selected window, the `k_kv` sharpest (largest `1 - U`) frames
/// among those admitted by `parity`. If the parity admits no frame at all
/// the restriction is dropped.
pub fn select_kv_frames(
    u: &Tensor,
    mask: &WindowMask,
    k_kv: usize,
    parity: Parity,
) -> Result<Vec<(usize, usize, Vec<usize>)>> {
    let (t_len, m, n) = levels_dims(u)?;
    check_mask(mask, m, n)?;
    let parity = if parity.eligible_count(t_len) == 0 {
        Parity::Off
    } else {
        parity
    };
    let mut out = Vec::new();
    for i in 0..m {
        for j in 0..n {
            if !mask.get(i, j) {
                continue;
            }
            let scores: Vec<(usize, f32)> = column(u, i, j)
                .into_iter()
                .enumerate()
                .filter(|(t, _)| parity.admits(*t))
                .map(|(t, level)| (t, 1.0 - level))
                .collect();
            out.push((i, j, top_k(&scores, k_kv)));
        }
    }
    Ok(out)
}

fn check_mask(mask: &WindowMask, m: usize, n: usize) -> Result<()> {
    if (mask.rows, mask.cols) != (m, n) || mask.selected.len() != m * n {
        return Err(Error::Plan(format!(
            "mask is {}x{} but window levels are {m}x{n}",
            mask.rows, mask.cols
        )));
    }
    Ok(())
}

/// Full selection for one layer from window blur levels `U: [T, m, n]`.
pub fn build_plan(
    u: &Tensor,
    theta: f32,
    k_q: usize,
    k_kv: usize,
    parity: Parity,
) -> Result<SparsityPlan> {
    if k_q == 0 || k_kv == 0 {
        return Err(Error::invalid(
            "build_plan",
            "k_q and k_kv must be at least 1",
        ));
    }
    let (t_len, _, _) = levels_dims(u)?;
    let mask = spatial_mask(u, theta)?;
    let queries = select_query_frames(u, &mask, k_q)?;
    let kvs = select_kv_frames(u, &mask, k_kv, parity)?;
    let windows = queries
        .into_iter()
        .zip(kvs)
        .map(|((row, col, query_frames), (_, _, kv_frames))| WindowPlan {
            row,
            col,
            query_frames,
            kv_frames,
        })
        .collect();
    Ok(SparsityPlan {
        mode: AttentionMode::Sparse,
        frames: t_len,
        theta: Some(theta),
        k_q,
        k_kv,
        parity,
        mask,
        windows,
    })
}
