//! Transformer fusion head: layer norm, multi-head self-attention with an
//! output projection, a two-layer GeLU feed-forward network and a linear
//! classifier over the flattened tokens.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{add_matmul_at_b, gelu, gelu_grad, layer_norm, layer_norm_backward, matmul, matmul_a_bt, softmax_backward, softmax_in_place, LayerNormCache};
use super::param::{zero_grads, Param};
use super::tensor::Tensor;
use super::NnError;
use crate::graph::Shape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub heads: usize,
    /// Shared query/key/value width; `None` means four times the token dim.
    pub model_dim: Option<usize>,
    pub hidden: (usize, usize),
    pub classes: usize,
    /// Adds the attention output back onto the input tokens.
    pub residual: bool,
    /// Probability of zeroing a whole token during training.
    pub token_dropout: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { heads: 2, model_dim: None, hidden: (512, 256), classes: 2, residual: true, token_dropout: 0.0 }
    }
}

const LN_GAMMA: usize = 0;
const LN_BETA: usize = 1;
const WQ: usize = 2;
const WK: usize = 3;
const WV: usize = 4;
const WO: usize = 5;
const W1: usize = 6;
const B1: usize = 7;
const W2: usize = 8;
const B2: usize = 9;
const WC: usize = 10;
const BC: usize = 11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionHead {
    pub tokens: usize,
    pub token_dim: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub hidden: (usize, usize),
    pub classes: usize,
    pub residual: bool,
    pub token_dropout: f64,
    pub params: Vec<Param>,
}

/// Per-sample activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SampleCache {
    ln: LayerNormCache,
    xn: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Attention matrices, one `n x n` block per head.
    pub gamma: Vec<Vec<f64>>,
    /// Concatenated head outputs, `n x d`.
    pub o: Vec<f64>,
    /// Fused tokens after projection (and residual), `n x token_dim`.
    pub fused: Vec<f64>,
    a1: Vec<f64>,
    g1: Vec<f64>,
    a2: Vec<f64>,
    g2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FusionCache {
    pub samples: Vec<SampleCache>,
    /// Per-sample token scales from token dropout (`batch x tokens`).
    mask: Option<Vec<f64>>,
}

impl FusionCache {
    /// Mean attention each token receives, averaged over heads and queries.
    pub fn attention_received(&self, sample: usize) -> Vec<f64> {
        let s = &self.samples[sample];
        let n = s.gamma.first().map_or(0, |g| libm::sqrt(g.len() as f64) as usize);
        let mut out = vec![0.0; n];
        for g in &s.gamma {
            for row in g.chunks_exact(n) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        let scale = (s.gamma.len() * n) as f64;
        out.iter_mut().for_each(|v| *v /= scale);
        out
    }
}

fn head_block(m: &[f64], n: usize, d: usize, h: usize, dh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dh);
    for r in 0..n {
        out.extend_from_slice(&m[r * d + h * dh..r * d + (h + 1) * dh]);
    }
    out
}

fn scatter_block(m: &mut [f64], block: &[f64], n: usize, d: usize, h: usize, dh: usize) {
    for r in 0..n {
        for c in 0..dh {
            m[r * d + h * dh + c] += block[r * dh + c];
        }
    }
}

fn add_bias(rows: &mut [f64], b: &[f64]) {
    for row in rows.chunks_exact_mut(b.len()) {
        for (v, bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
}

impl FusionHead {
    pub fn new<R: Rng + ?Sized>(tokens: usize, token_dim: usize, cfg: &FusionConfig, rng: &mut R) -> Result<Self, NnError> {
        let d = cfg.model_dim.unwrap_or(4 * token_dim);
        if !(0.0..1.0).contains(&cfg.token_dropout) {
            return Err(NnError::InvalidFusionConfig);
        }
        if tokens == 0 || token_dim == 0 || cfg.heads == 0 || !d.is_multiple_of(cfg.heads) || cfg.classes < 2 || cfg.hidden.0 == 0 || cfg.hidden.1 == 0 {
            return Err(NnError::InvalidFusionConfig);
        }
        let flat = tokens * token_dim;
        let (h1, h2) = cfg.hidden;
        let params = vec![
            Param::filled("ln_gamma", &[token_dim], 1.0),
            Param::zeros("ln_beta", &[token_dim]),
            Param::glorot("w_q", &[token_dim, d], token_dim, d, rng),
            Param::glorot("w_k", &[token_dim, d], token_dim, d, rng),
            Param::glorot("w_v", &[token_dim, d], token_dim, d, rng),
            Param::glorot("w_o", &[d, token_dim], d, token_dim, rng),
            Param::glorot("w_1", &[flat, h1], flat, h1, rng),
            Param::zeros("b_1", &[h1]),
            Param::glorot("w_2", &[h1, h2], h1, h2, rng),
            Param::zeros("b_2", &[h2]),
            Param::glorot("w_c", &[h2, cfg.classes], h2, cfg.classes, rng),
            Param::zeros("b_c", &[cfg.classes]),
        ];
        Ok(FusionHead {
            tokens,
            token_dim,
            model_dim: d,
            heads: cfg.heads,
            hidden: cfg.hidden,
            classes: cfg.classes,
            residual: cfg.residual,
            token_dropout: cfg.token_dropout,
            params,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    fn p(&self, i: usize) -> &[f64] {
        &self.params[i].value
    }

    /// Self-attention over one sample's `n x token_dim` tokens.
    pub fn attend(&self, x: &[f64]) -> SampleCache {
        let (n, dt, d) = (self.tokens, self.token_dim, self.model_dim);
        let dh = self.head_dim();
        let (xn, ln) = layer_norm(x, n, dt, self.p(LN_GAMMA), self.p(LN_BETA));
        let q = matmul(&xn, self.p(WQ), n, dt, d);
        let k = matmul(&xn, self.p(WK), n, dt, d);
        let v = matmul(&xn, self.p(WV), n, dt, d);
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut o = vec![0.0; n * d];
        let mut gamma = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = head_block(&q, n, d, h, dh);
            let kh = head_block(&k, n, d, h, dh);
            let vh = head_block(&v, n, d, h, dh);
            let mut s = matmul_a_bt(&qh, &kh, n, dh, n);
            s.iter_mut().for_each(|e| *e *= scale);
            for row in s.chunks_exact_mut(n) {
                softmax_in_place(row);
            }
            let oh = matmul(&s, &vh, n, n, dh);
            scatter_block(&mut o, &oh, n, d, h, dh);
            gamma.push(s);
        }
        let mut fused = matmul(&o, self.p(WO), n, d, dt);
        if self.residual {
            for (f, xv) in fused.iter_mut().zip(x) {
                *f += xv;
            }
        }
        SampleCache { ln, xn, q, k, v, gamma, o, fused, a1: Vec::new(), g1: Vec::new(), a2: Vec::new(), g2: Vec::new() }
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NnError> {
        match x.shape {
            Shape::Seq { len, channels } if len == self.tokens && channels == self.token_dim => Ok(()),
            s => Err(NnError::TokenDimMismatch { expected: Shape::seq(self.tokens, self.token_dim), found: s }),
        }
    }

    /// Logits (`batch x classes`) for a batch of token sequences.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, FusionCache), NnError> {
        self.forward_masked(x, None)
    }

    /// Training-mode forward: tokens are dropped with the configured
    /// probability and survivors rescaled. A single token is never dropped.
    pub fn forward_train<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Result<(Tensor, FusionCache), NnError> {
        if self.token_dropout == 0.0 || self.tokens < 2 {
            return self.forward_masked(x, None);
        }
        let keep = 1.0 / (1.0 - self.token_dropout);
        let mask = (0..x.batch * self.tokens).map(|_| if rng.gen::<f64>() < self.token_dropout { 0.0 } else { keep }).collect();
        self.forward_masked(x, Some(mask))
    }

    fn forward_masked(&self, x: &Tensor, mask: Option<Vec<f64>>) -> Result<(Tensor, FusionCache), NnError> {
        self.check_input(x)?;
        let dt = self.token_dim;
        let masked;
        let x = match &mask {
            Some(m) => {
                let mut t = x.clone();
                for (row, s) in t.data.chunks_exact_mut(dt).zip(m) {
                    row.iter_mut().for_each(|v| *v *= s);
                }
                masked = t;
                &masked
            }
            None => x,
        };
        let (h1, h2) = self.hidden;
        let flat = self.tokens * self.token_dim;
        let mut logits = Tensor::zeros(x.batch, Shape::Flat(self.classes));
        let mut samples = Vec::with_capacity(x.batch);
        for b in 0..x.batch {
            let mut s = self.attend(x.item(b));
            let mut a1 = matmul(&s.fused, self.p(W1), 1, flat, h1);
            add_bias(&mut a1, self.p(B1));
            let g1: Vec<f64> = a1.iter().map(|v| gelu(*v)).collect();
            let mut a2 = matmul(&g1, self.p(W2), 1, h1, h2);
            add_bias(&mut a2, self.p(B2));
            let g2: Vec<f64> = a2.iter().map(|v| gelu(*v)).collect();
            let mut out = matmul(&g2, self.p(WC), 1, h2, self.classes);
            add_bias(&mut out, self.p(BC));
            logits.item_mut(b).copy_from_slice(&out);
            s.a1 = a1;
            s.g1 = g1;
            s.a2 = a2;
            s.g2 = g2;
            samples.push(s);
        }
        Ok((logits, FusionCache { samples, mask }))
    }

    /// Gradients of the parameters (in `params` order) and of the input tokens.
    pub fn backward(&self, cache: &FusionCache, dlogits: &Tensor) -> (Vec<Vec<f64>>, Tensor) {
        let (n, dt, d) = (self.tokens, self.token_dim, self.model_dim);
        let dh = self.head_dim();
        let (h1, h2) = self.hidden;
        let flat = n * dt;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut grads = zero_grads(&self.params);
        let mut dx = Tensor::zeros(dlogits.batch, Shape::seq(n, dt));
        for (b, s) in cache.samples.iter().enumerate() {
            let dl = dlogits.item(b);
            add_matmul_at_b(&mut grads[WC], &s.g2, dl, 1, h2, self.classes);
            grads[BC].iter_mut().zip(dl).for_each(|(g, v)| *g += v);
            let dg2 = matmul_a_bt(dl, self.p(WC), 1, self.classes, h2);
            let da2: Vec<f64> = dg2.iter().zip(&s.a2).map(|(g, a)| g * gelu_grad(*a)).collect();
            add_matmul_at_b(&mut grads[W2], &s.g1, &da2, 1, h1, h2);
            grads[B2].iter_mut().zip(&da2).for_each(|(g, v)| *g += v);
            let dg1 = matmul_a_bt(&da2, self.p(W2), 1, h2, h1);
            let da1: Vec<f64> = dg1.iter().zip(&s.a1).map(|(g, a)| g * gelu_grad(*a)).collect();
            add_matmul_at_b(&mut grads[W1], &s.fused, &da1, 1, flat, h1);
            grads[B1].iter_mut().zip(&da1).for_each(|(g, v)| *g += v);
            let dfused = matmul_a_bt(&da1, self.p(W1), 1, h1, flat);

            let dxi = dx.item_mut(b);
            if self.residual {
                dxi.copy_from_slice(&dfused);
            }
            add_matmul_at_b(&mut grads[WO], &s.o, &dfused, n, d, dt);
            let d_o = matmul_a_bt(&dfused, self.p(WO), n, dt, d);
            let mut dq = vec![0.0; n * d];
            let mut dk = vec![0.0; n * d];
            let mut dv = vec![0.0; n * d];
            for h in 0..self.heads {
                let doh = head_block(&d_o, n, d, h, dh);
                let qh = head_block(&s.q, n, d, h, dh);
                let kh = head_block(&s.k, n, d, h, dh);
                let vh = head_block(&s.v, n, d, h, dh);
                let g = &s.gamma[h];
                let dgamma = matmul_a_bt(&doh, &vh, n, dh, n);
                let mut dvh = vec![0.0; n * dh];
                add_matmul_at_b(&mut dvh, g, &doh, n, n, dh);
                let mut ds = Vec::with_capacity(n * n);
                for r in 0..n {
                    ds.extend(softmax_backward(&g[r * n..(r + 1) * n], &dgamma[r * n..(r + 1) * n]).into_iter().map(|v| v * scale));
                }
                let dqh = matmul(&ds, &kh, n, n, dh);
                let mut dkh = vec![0.0; n * dh];
                add_matmul_at_b(&mut dkh, &ds, &qh, n, n, dh);
                scatter_block(&mut dq, &dqh, n, d, h, dh);
                scatter_block(&mut dk, &dkh, n, d, h, dh);
                scatter_block(&mut dv, &dvh, n, d, h, dh);
            }
            add_matmul_at_b(&mut grads[WQ], &s.xn, &dq, n, dt, d);
            add_matmul_at_b(&mut grads[WK], &s.xn, &dk, n, dt, d);
            add_matmul_at_b(&mut grads[WV], &s.xn, &dv, n, dt, d);
            let mut dxn = matmul_a_bt(&dq, self.p(WQ), n, d, dt);
            for (a, bv) in dxn.iter_mut().zip(matmul_a_bt(&dk, self.p(WK), n, d, dt)) {
                *a += bv;
            }
            for (a, bv) in dxn.iter_mut().zip(matmul_a_bt(&dv, self.p(WV), n, d, dt)) {
                *a += bv;
            }
            let (dln, dgam, dbet) = layer_norm_backward(&dxn, &s.ln, n, dt, self.p(LN_GAMMA));
            grads[LN_GAMMA].iter_mut().zip(&dgam).for_each(|(g, v)| *g += v);
            grads[LN_BETA].iter_mut().zip(&dbet).for_each(|(g, v)| *g += v);
            for (a, v) in dxi.iter_mut().zip(&dln) {
                *a += v;
            }
        }
        if let Some(m) = &cache.mask {
            for (row, s) in dx.data.chunks_exact_mut(dt).zip(m) {
                row.iter_mut().for_each(|v| *v *= s);
            }
        }
        (grads, dx)
    }
}
