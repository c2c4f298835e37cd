use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::graph::Shape;

/// A batch of activations. Data is laid out `[batch][len][channels]` for
/// sequences and `[batch][dim]` for flat vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub batch: usize,
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(batch: usize, shape: Shape) -> Self {
        Tensor { batch, shape, data: vec![0.0; batch * shape.numel()] }
    }

    pub fn from_data(batch: usize, shape: Shape, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), batch * shape.numel(), "tensor data does not match its shape");
        Tensor { batch, shape, data }
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape.numel()
    }

    pub fn item(&self, b: usize) -> &[f64] {
        let n = self.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.item_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    /// Number of feature rows: `batch * len` for sequences, `batch` otherwise.
    pub fn rows(&self) -> usize {
        self.batch * self.shape.len().unwrap_or(1)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
