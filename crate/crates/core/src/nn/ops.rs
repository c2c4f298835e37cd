//! Dense linear algebra and elementwise kernels shared by the layers.

use alloc::vec;
use alloc::vec::Vec;

use crate::graph::Activation;

/// `a (m x k) * b (k x n)`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out += a^T (m x k -> k x m) * b (m x n)`.
pub fn add_matmul_at_b(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `a (m x n) * b^T (b is k x n) -> m x k`.
pub fn matmul_a_bt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            out[i * k + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GeLU, `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * libm::erfc(-x / core::f64::consts::SQRT_2)
}

pub fn gelu_grad(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2) + x * FRAC_1_SQRT_2PI * libm::exp(-0.5 * x * x)
}

pub fn activate(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Relu => x.max(0.0),
        Activation::Tanh => libm::tanh(x),
        Activation::Sigmoid => sigmoid(x),
        Activation::Gelu => gelu(x),
        Activation::Linear => x,
    }
}

/// Derivative given the pre-activation `x` and the output `y`.
pub fn activate_grad(kind: Activation, x: f64, y: f64) -> f64 {
    match kind {
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - y * y,
        Activation::Sigmoid => y * (1.0 - y),
        Activation::Gelu => gelu_grad(x),
        Activation::Linear => 1.0,
    }
}

/// In-place numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Backward of a softmax row: `ds = p * (dp - <dp, p>)`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(pi, di)| pi * (di - dot)).collect()
}

/// Mean softmax cross-entropy over a batch of logits and the gradient with
/// respect to the logits.
pub fn cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let batch = labels.len();
    let mut grad = logits.to_vec();
    let mut loss = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        let row = &mut grad[b * classes..(b + 1) * classes];
        softmax_in_place(row);
        loss -= libm::log(row[y].max(1e-300));
        row[y] -= 1.0;
        for g in row.iter_mut() {
            *g /= batch as f64;
        }
    }
    (loss / batch as f64, grad)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row layer normalisation cache.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Normalise each of `rows` rows of width `dim`, then scale and shift.
pub fn layer_norm(x: &[f64], rows: usize, dim: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, LayerNormCache) {
    let mut out = vec![0.0; rows * dim];
    let mut normalized = vec![0.0; rows * dim];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let is = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
        inv_std[r] = is;
        for c in 0..dim {
            let n = (row[c] - mean) * is;
            normalized[r * dim + c] = n;
            out[r * dim + c] = n * gamma[c] + beta[c];
        }
    }
    (out, LayerNormCache { normalized, inv_std })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward(dy: &[f64], cache: &LayerNormCache, rows: usize, dim: usize, gamma: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; rows * dim];
    let mut dgamma = vec![0.0; dim];
    let mut dbeta = vec![0.0; dim];
    for r in 0..rows {
        let n = &cache.normalized[r * dim..(r + 1) * dim];
        let g = &dy[r * dim..(r + 1) * dim];
        let mut mean_dn = 0.0;
        let mut mean_dn_n = 0.0;
        for c in 0..dim {
            dgamma[c] += g[c] * n[c];
            dbeta[c] += g[c];
            let dn = g[c] * gamma[c];
            mean_dn += dn;
            mean_dn_n += dn * n[c];
        }
        mean_dn /= dim as f64;
        mean_dn_n /= dim as f64;
        for c in 0..dim {
            let dn = g[c] * gamma[c];
            dx[r * dim + c] = cache.inv_std[r] * (dn - mean_dn - n[c] * mean_dn_n);
        }
    }
    (dx, dgamma, dbeta)
}
