//! Blur maps and their token/window reductions.

/// `(B̂, B, A)` for `T` frames given `T - 1` forward flows `O(t → t+1)` and
/// `T - 1` backward flows `O(t+1 → t)`, each `[H, W, 2]`.
pub fn blur_maps(
    forward: &[Vec<f64>],
    backward: &[Vec<f64>],
    t_len: usize,
    h: usize,
    w: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut bhat = vec![0.0; t_len * h * w];
    for t in 0..t_len {
        for p in 0..h * w {
            let mut s = 0.0;
            if t + 1 < t_len {
                let f = &forward[t];
                s += f[2 * p] * f[2 * p] + f[2 * p + 1] * f[2 * p + 1];
            }
            if t > 0 {
                let b = &backward[t - 1];
                s += b[2 * p] * b[2 * p] + b[2 * p + 1] * b[2 * p + 1];
            }
            bhat[t * h * w + p] = s;
        }
    }
    let lo = bhat.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = bhat.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let b: Vec<f64> = if hi > lo {
        bhat.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; bhat.len()]
    };
    let a = b.iter().map(|v| 1.0 - v).collect();
    (bhat, b, a)
}

/// Mean of each `p × p` patch at stride `s` (front offset `(p - s) / 2`,
/// `ceil(H / s)` patches per axis), over the pixels inside the map.
pub fn patch_mean(map: &[f64], h: usize, w: usize, p: usize, s: usize) -> (Vec<f64>, usize, usize) {
    let rows = h.div_ceil(s);
    let cols = w.div_ceil(s);
    let off = ((p - s) / 2) as i64;
    let mut out = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let (mut sum, mut n) = (0.0, 0);
            for dy in 0..p as i64 {
                for dx in 0..p as i64 {
                    let y = (i * s) as i64 - off + dy;
                    let x = (j * s) as i64 - off + dx;
                    if y >= 0 && x >= 0 && y < h as i64 && x < w as i64 {
                        sum += map[y as usize * w + x as usize];
                        n += 1;
                    }
                }
            }
            out.push(sum / n as f64);
        }
    }
    (out, rows, cols)
}

/// Max over non-overlapping `wh × ww` windows of an `[M, N]` map.
pub fn window_max(map: &[f64], m: usize, n: usize, wh: usize, ww: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..m / wh {
        for j in 0..n / ww {
            let mut best = f64::NEG_INFINITY;
            for a in 0..wh {
                for b in 0..ww {
                    best = best.max(map[(i * wh + a) * n + j * ww + b]);
                }
            }
            out.push(best);
        }
    }
    out
}
