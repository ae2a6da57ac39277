//! Dense row-major rank-3 tensor used for `[heads, tokens, dim]` data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `[H, L, D]` tensor of `f32` with `D` varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    shape: [usize; 3],
    data: Vec<f32>,
}

impl Tensor3 {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn heads(&self) -> usize {
        self.shape[0]
    }

    pub fn rows(&self) -> usize {
        self.shape[1]
    }

    pub fn dim(&self) -> usize {
        self.shape[2]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// The `dim`-long vector at `(head, row)`.
    pub fn row(&self, head: usize, row: usize) -> &[f32] {
        let d = self.shape[2];
        let start = (head * self.shape[1] + row) * d;
        &self.data[start..start + d]
    }

    pub fn row_mut(&mut self, head: usize, row: usize) -> &mut [f32] {
        let d = self.shape[2];
        let start = (head * self.shape[1] + row) * d;
        &mut self.data[start..start + d]
    }

    /// All rows of one head, `[L, D]` contiguous.
    pub fn head(&self, head: usize) -> &[f32] {
        let stride = self.shape[1] * self.shape[2];
        &self.data[head * stride..(head + 1) * stride]
    }

    pub fn head_mut(&mut self, head: usize) -> &mut [f32] {
        let stride = self.shape[1] * self.shape[2];
        &mut self.data[head * stride..(head + 1) * stride]
    }

    /// Keeps the first `len` rows of every head.
    pub fn truncate_rows(&self, len: usize) -> Result<Self> {
        let [h, l, d] = self.shape;
        if len > l {
            return Err(Error::LengthOutOfRange {
                requested: len,
                available: l,
            });
        }
        let mut data = Vec::with_capacity(h * len * d);
        for head in 0..h {
            data.extend_from_slice(&self.head(head)[..len * d]);
        }
        Ok(Self {
            shape: [h, len, d],
            data,
        })
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|x| !x.is_finite())
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
