//! Straight-line f64 reference implementations used as test oracles.
//!
//! Everything here works on flat row-major slices with explicit sizes and
//! shares no code with the production crate. Loops are written for
//! readability, not speed.

pub mod attention;
pub mod blur;
pub mod conv;
pub mod propagation;

/// Mirror `i` into `0..len` without repeating the edge sample.
pub fn mirror(mut i: i64, len: usize) -> usize {
    let n = len as i64;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Bilinear sample of channel `ch` of an `[H, W, C]` map at `(y, x)`,
/// treating everything outside the map as zero.
pub fn bilinear(map: &[f64], h: usize, w: usize, c: usize, ch: usize, y: f64, x: f64) -> f64 {
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            map[((yy as usize) * w + xx as usize) * c + ch]
        }
    };
    (1.0 - fy) * (1.0 - fx) * at(y0, x0)
        + (1.0 - fy) * fx * at(y0, x0 + 1.0)
        + fy * (1.0 - fx) * at(y0 + 1.0, x0)
        + fy * fx * at(y0 + 1.0, x0 + 1.0)
}

/// `out(y, x) = map(y + v, x + u)` for a flow `[H, W, 2]` of `(u, v)`.
pub fn warp(map: &[f64], h: usize, w: usize, c: usize, flow: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let u = flow[(y * w + x) * 2];
            let v = flow[(y * w + x) * 2 + 1];
            for ch in 0..c {
                out[(y * w + x) * c + ch] = bilinear(map, h, w, c, ch, y as f64 + v, x as f64 + u);
            }
        }
    }
    out
}

/// Indices of the `k` largest scores by repeated arg-max; equal scores go to
/// the smaller index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut taken = vec![false; scores.len()];
    let mut out = Vec::new();
    for _ in 0..k.min(scores.len()) {
        let mut best: Option<usize> = None;
        for (i, &s) in scores.iter().enumerate() {
            if taken[i] {
                continue;
            }
            match best {
                Some(b) if scores[b] >= s => {}
                _ => best = Some(i),
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push(b);
    }
    out
}

pub fn to_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

/// `max |a - b|` and `max |b|` over paired elements.
pub fn max_errors(a: &[f32], b: &[f64]) -> (f64, f64) {
    assert_eq!(a.len(), b.len(), "compared buffers differ in length");
    a.iter().zip(b).fold((0.0, 0.0), |(err, mag), (&x, &y)| {
        (f64::max(err, (x as f64 - y).abs()), f64::max(mag, y.abs()))
    })
}
