use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// A named parameter tensor stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: Vec<f64>,
}

impl Param {
    pub fn zeros(name: &str, dims: &[usize]) -> Self {
        Param { name: name.into(), dims: dims.to_vec(), value: vec![0.0; dims.iter().product()] }
    }

    pub fn filled(name: &str, dims: &[usize], v: f64) -> Self {
        Param { name: name.into(), dims: dims.to_vec(), value: vec![v; dims.iter().product()] }
    }

    /// Glorot-uniform initialisation with the given fan sizes.
    pub fn glorot<R: Rng + ?Sized>(name: &str, dims: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        let n = dims.iter().product();
        let value = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
        Param { name: name.into(), dims: dims.to_vec(), value }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Zeroed gradient buffers matching a parameter list.
pub fn zero_grads(params: &[Param]) -> Vec<Vec<f64>> {
    params.iter().map(|p| vec![0.0; p.len()]).collect()
}
