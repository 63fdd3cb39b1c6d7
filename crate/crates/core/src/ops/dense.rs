use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const LANES: usize = 8;

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; LANES];
    let chunks = a.len() / LANES;
    for i in 0..chunks {
        let xa = &a[i * LANES..(i + 1) * LANES];
        let xb = &b[i * LANES..(i + 1) * LANES];
        for l in 0..LANES {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * LANES..a.len() {
        tail += a[i] * b[i];
    }
    let s0 = (acc[0] + acc[4]) + (acc[1] + acc[5]);
    let s1 = (acc[2] + acc[6]) + (acc[3] + acc[7]);
    s0 + s1 + tail
}

/// `out[r, n] = Σ_k a[r, k] · b[n, k]` for row-major `a: [R, K]`, `b: [N, K]`.
pub fn matmul_nt(a: &[f32], b: &[f32], k: usize, out: &mut [f32]) {
    let n = b.len().checked_div(k).unwrap_or(0);
    if n == 0 {
        return;
    }
    let rows = out.len() / n;
    debug_assert_eq!(a.len(), rows * k);
    let body = |(r, row): (usize, &mut [f32])| {
        let ar = &a[r * k..(r + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            *o = dot(ar, &b[j * k..(j + 1) * k]);
        }
    };
    if rows * n * k > 1 << 16 {
        out.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        out.chunks_mut(n).enumerate().for_each(body);
    }
}

/// Affine map along the last axis: `x[..., Cin] · Wᵀ + b`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    weight.expect_rank("linear", 2)?;
    let (c_out, c_in) = (weight.shape()[0], weight.shape()[1]);
    let last = x.shape().last().copied().unwrap_or(0);
    if x.rank() == 0 || last != c_in {
        return Err(Error::shape("linear", &[c_in], &[last]));
    }
    if bias.shape() != [c_out] {
        return Err(Error::shape("linear", &[c_out], bias.shape()));
    }
    let rows = x.len() / c_in.max(1);
    let mut out = vec![0.0f32; rows * c_out];
    matmul_nt(x.data(), weight.data(), c_in, &mut out);
    let b = bias.data();
    for row in out.chunks_mut(c_out.max(1)) {
        for (o, bb) in row.iter_mut().zip(b) {
            *o += bb;
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = c_out;
    Tensor::new(shape, out)
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if max == f32::NEG_INFINITY {
        row.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    x.expect_rank("softmax_rows", 2)?;
    let k = x.shape()[1];
    let mut out = x.clone();
    if k > 0 {
        for row in out.data_mut().chunks_mut(k) {
            softmax_in_place(row);
        }
    }
    Ok(out)
}

/// Layer normalization over the last axis with affine `gamma`/`beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let c = x.shape().last().copied().unwrap_or(0);
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape("layer_norm", &[c], gamma.shape()));
    }
    let mut out = x.clone();
    let (g, b) = (gamma.data(), beta.data());
    for row in out.data_mut().chunks_mut(c.max(1)) {
        let mean = row.iter().sum::<f32>() / c as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / c as f32;
        let inv = 1.0 / (var + eps).sqrt();
        for (i, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * g[i] + b[i];
        }
    }
    Ok(out)
}

/// GELU, tanh approximation.
#[inline]
pub fn gelu(x: f32) -> f32 {
    const K: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (K * (x + 0.044_715 * x * x * x)).tanh())
}

#[inline]
pub fn leaky_relu(x: f32) -> f32 {
    if x >= 0.0 {
        x
    } else {
        0.1 * x
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_row() {
        let s = softmax_rows(&Tensor::new([1, 3], vec![0.0; 3]).unwrap()).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_does_not_overflow() {
        let s = softmax_rows(&Tensor::new([1, 2], vec![1000.0, 0.0]).unwrap()).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-6);
        assert!(s.data()[1].abs() < 1e-6);
    }

    #[test]
    fn softmax_matches_f64_evaluation() {
        let s = softmax_rows(&Tensor::new([1, 3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
        let z: f64 = e.iter().sum();
        for (a, b) in s.data().iter().zip(&e) {
            assert!((*a as f64 - b / z).abs() < 1e-7);
        }
    }

    #[test]
    fn linear_small_cases() {
        let x = Tensor::new([2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new([1, 2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::zeros([1]);
        assert_eq!(linear(&x, &w, &b).unwrap().data(), &[3.0]);

        let x = Tensor::from_fn([3, 4], |i| (i[0] * 4 + i[1]) as f32);
        let eye = Tensor::from_fn([4, 4], |i| if i[0] == i[1] { 1.0 } else { 0.0 });
        assert_eq!(linear(&x, &eye, &Tensor::zeros([4])).unwrap(), x);
    }

    #[test]
    fn linear_rejects_mismatch() {
        let x = Tensor::zeros([3, 4]);
        assert!(linear(&x, &Tensor::zeros([2, 5]), &Tensor::zeros([2])).is_err());
        assert!(linear(&x, &Tensor::zeros([2, 4]), &Tensor::zeros([3])).is_err());
    }

    #[test]
    fn dot_handles_ragged_tail() {
        let a: Vec<f32> = (0..13).map(|v| v as f32).collect();
        assert_eq!(dot(&a, &a), (0..13).map(|v| (v * v) as f32).sum::<f32>());
    }
}
