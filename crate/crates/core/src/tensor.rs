use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of a dense tensor, outermost first.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape(Vec<usize>);

impl TensorShape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Structure(format!("invalid tensor dims {dims:?}")));
        }
        Ok(TensorShape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Shape with a leading batch dimension prepended.
    pub fn batched(&self, batch: usize) -> Result<Self> {
        let mut dims = Vec::with_capacity(self.0.len() + 1);
        dims.push(batch);
        dims.extend_from_slice(&self.0);
        TensorShape::new(dims)
    }

    /// Shape with the leading dimension dropped.
    pub fn per_sample(&self) -> Result<Self> {
        TensorShape::new(self.0[1..].to_vec())
    }
}

impl fmt::Debug for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

/// Row-major `f32` tensor.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: TensorShape,
    values: Vec<f32>,
}

impl DenseTensor {
    pub fn new(shape: TensorShape, values: Vec<f32>) -> Result<Self> {
        if values.len() != shape.numel() {
            return Err(Error::Structure(format!(
                "tensor of shape {shape} needs {} values, got {}",
                shape.numel(),
                values.len()
            )));
        }
        Ok(DenseTensor { shape, values })
    }

    pub fn from_dims(dims: impl Into<Vec<usize>>, values: Vec<f32>) -> Result<Self> {
        DenseTensor::new(TensorShape::new(dims)?, values)
    }

    pub fn zeros(shape: TensorShape) -> Self {
        let n = shape.numel();
        DenseTensor { shape, values: vec![0.0; n] }
    }

    pub fn filled(shape: TensorShape, value: f32) -> Self {
        let n = shape.numel();
        DenseTensor { shape, values: vec![value; n] }
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Leading dimension.
    pub fn batch(&self) -> usize {
        self.shape.dims()[0]
    }

    /// Number of values per leading-dimension entry.
    pub fn row_len(&self) -> usize {
        self.len() / self.batch()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.row_len();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn reshape(self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        DenseTensor::new(TensorShape::new(dims)?, self.values)
    }

    /// Gathers the given leading-dimension rows into a new tensor.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let w = self.row_len();
        let mut values = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            if r >= self.batch() {
                return Err(Error::Input(format!("row {r} out of range {}", self.batch())));
            }
            values.extend_from_slice(&self.values[r * w..(r + 1) * w]);
        }
        let shape = self.shape.per_sample()?.batched(rows.len())?;
        DenseTensor::new(shape, values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.batch()).map(|i| argmax(self.row(i))).collect()
    }
}

impl fmt::Debug for DenseTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseTensor")
            .field("shape", &self.shape)
            .field("values", &Preview(&self.values))
            .finish()
    }
}

struct Preview<'a>(&'a [f32]);

impl fmt::Debug for Preview<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.len() <= 8 {
            write!(f, "{:?}", self.0)
        } else {
            write!(f, "{:?}..({} values)", &self.0[..8], self.0.len())
        }
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_dims() {
        assert!(TensorShape::new(vec![2, 0]).is_err());
        assert!(TensorShape::new(Vec::<usize>::new()).is_err());
        assert_eq!(TensorShape::new(vec![2, 3, 4]).unwrap().numel(), 24);
    }

    #[test]
    fn length_must_match_shape() {
        assert!(DenseTensor::from_dims(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn select_rows_gathers() {
        let t = DenseTensor::from_dims(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let s = t.select_rows(&[2, 0]).unwrap();
        assert_eq!(s.dims(), &[2, 2]);
        assert_eq!(s.values(), &[5., 6., 1., 2.]);
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
