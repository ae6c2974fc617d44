//! Dense weight tensors and binary prune masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense real-valued array (vector, matrix, or 4-D filter bank) stored
/// flat in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl WeightTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Config(format!(
                "shape {:?} implies {} elements but data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn same_shape(&self, other: &WeightTensor) -> bool {
        self.shape == other.shape
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }

    /// Squared Frobenius distance to `other`. Panics on shape mismatch.
    pub fn dist_sq(&self, other: &WeightTensor) -> f64 {
        assert_eq!(self.shape, other.shape, "dist_sq shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = (a - b) as f64;
                d * d
            })
            .sum()
    }

    /// Elementwise `self + scale * other`, in place.
    pub fn axpy(&mut self, scale: f32, other: &WeightTensor) {
        assert_eq!(self.shape, other.shape, "axpy shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Binary mask over a tensor: `true` marks a surviving weight.
///
/// Masked-out entries are exactly zero everywhere downstream of pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneMask {
    shape: Vec<usize>,
    keep: Vec<bool>,
}

impl PruneMask {
    pub fn new(shape: Vec<usize>, keep: Vec<bool>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != keep.len() {
            return Err(Error::Config(format!(
                "mask shape {:?} implies {} bits but got {}",
                shape,
                numel,
                keep.len()
            )));
        }
        Ok(Self { shape, keep })
    }

    pub fn all_ones(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            keep: vec![true; numel],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn count_ones(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    /// Zero out masked entries of `t`, in place.
    pub fn apply(&self, t: &mut WeightTensor) {
        assert_eq!(self.shape, t.shape(), "mask shape mismatch");
        for (v, &k) in t.data_mut().iter_mut().zip(&self.keep) {
            if !k {
                *v = 0.0;
            }
        }
    }

    /// True when every masked-out entry of `t` is exactly zero.
    pub fn respected_by(&self, t: &WeightTensor) -> bool {
        self.keep
            .iter()
            .zip(t.data())
            .all(|(&k, &v)| k || v == 0.0)
    }
}
