//! Dense row-major f64 arrays of rank 1 to 3.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A dense row-major array of rank 1, 2 or 3.
///
/// The data length always equals the product of the extents; constructors
/// enforce it. Rank 3 is enough for the batched segment features
/// (`B x N x D`) this crate works with.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::Config(alloc::format!(
                "invalid array shape {shape:?}: need 1..=3 extents"
            )));
        }
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::Dimension {
                op: "from_vec",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Self::from_vec(shape, vec![0.0; numel]).expect("zeros: valid shape")
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Fill with a single value, keeping the shape.
    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Self::from_vec(shape, vec![value; numel]).expect("full: valid shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// True when the array holds exactly one value.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::NotScalar {
                shape: self.shape.clone(),
            })
        }
    }

    /// Reinterpret the data under a new shape with the same element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let re = Self::from_vec(shape, self.data.clone())?;
        Ok(re)
    }

    pub fn iter(&self) -> core::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Leading extent; the batch size for rank-2/3 arrays.
    pub fn extent(&self, axis: usize) -> usize {
        self.shape[axis]
    }
}
