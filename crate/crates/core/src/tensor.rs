//! Dense row-major `f32` tensors and the optical-flow field type.

use crate::error::{Error, Result};

/// A dense, row-major tensor of `f32` values.
///
/// Axis order is a convention of each call site; feature maps are stored
/// `[H, W, C]` and sequences `[T, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(
                "Tensor::new",
                format!(
                    "shape {shape:?} holds {expected} values but {} were supplied",
                    data.len()
                ),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f32) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; len],
        }
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(&[usize]) -> f32) -> Self {
        let shape = shape.into();
        let len: usize = shape.iter().product();
        let mut index = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&index));
            for axis in (0..shape.len()).rev() {
                index[axis] += 1;
                if index[axis] < shape[axis] {
                    break;
                }
                index[axis] = 0;
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn expect_rank(&self, op: &'static str, rank: usize) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::invalid(
                op,
                format!("expected a rank-{rank} tensor, got shape {:?}", self.shape),
            ));
        }
        Ok(())
    }

    /// `(H, W, C)` of a rank-3 tensor.
    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        self.expect_rank(op, 3)?;
        Ok((self.shape[0], self.shape[1], self.shape[2]))
    }

    /// Number of entries along axis 0; 0 for scalars.
    pub fn outer(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Copy of the `index`-th slice along axis 0.
    pub fn slice_outer(&self, index: usize) -> Tensor {
        let inner: usize = self.shape[1..].iter().product();
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        }
    }

    pub fn outer_slices(&self) -> impl Iterator<Item = Tensor> + '_ {
        (0..self.outer()).map(|i| self.slice_outer(i))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("Tensor::stack", "nothing to stack"))?;
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for part in parts {
            if part.shape != first.shape {
                return Err(Error::shape("Tensor::stack", &first.shape, &part.shape));
            }
            data.extend_from_slice(&part.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f32::max)
    }
}

/// Dense displacement field `[H, W, 2]`: channel 0 is horizontal, channel 1
/// vertical, both in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow(Tensor);

impl Flow {
    pub fn new(field: Tensor) -> Result<Self> {
        let (_, _, c) = field.dims3("Flow::new")?;
        if c != 2 {
            return Err(Error::invalid(
                "Flow::new",
                format!("flow needs 2 channels, got {c}"),
            ));
        }
        Ok(Flow(field))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Flow(Tensor::zeros([height, width, 2]))
    }

    pub fn constant(height: usize, width: usize, u: f32, v: f32) -> Self {
        Flow(Tensor::from_fn([height, width, 2], |i| {
            if i[2] == 0 {
                u
            } else {
                v
            }
        }))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    /// `(u, v)` displacement at row `y`, column `x`.
    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (f32, f32) {
        let i = (y * self.width() + x) * 2;
        let d = self.0.data();
        (d[i], d[i + 1])
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn scaled(&self, factor: f32) -> Flow {
        Flow(self.0.map(|v| v * factor))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_fn_visits_row_major() {
        let t = Tensor::from_fn([2, 3], |i| (i[0] * 10 + i[1]) as f32);
        assert_eq!(t.data(), &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
    }

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new([2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn stack_and_slice_agree() {
        let a = Tensor::full([2, 2], 1.0);
        let b = Tensor::full([2, 2], 2.0);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2]);
        assert_eq!(s.slice_outer(0), a);
        assert_eq!(s.slice_outer(1), b);
    }

    #[test]
    fn flow_requires_two_channels() {
        assert!(Flow::new(Tensor::zeros([4, 4, 3])).is_err());
        let f = Flow::constant(2, 3, 1.5, -2.0);
        assert_eq!(f.at(1, 2), (1.5, -2.0));
    }
}
