//! Forward and backward kernels for the individual layer kinds.

use alloc::vec;
use alloc::vec::Vec;

use super::ops::{add_matmul_at_b, matmul, matmul_a_bt, sigmoid, softmax_backward, softmax_in_place};
use super::tensor::Tensor;
use crate::graph::{Padding, Shape};

/// Affine map over the last axis. `w` is `in x out`.
pub fn dense_forward(x: &Tensor, w: &[f64], b: &[f64], units: usize) -> Tensor {
    let cin = x.shape.channels();
    let rows = x.rows();
    let mut y = matmul(&x.data, w, rows, cin, units);
    for row in y.chunks_exact_mut(units) {
        for (v, bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
    let shape = match x.shape {
        Shape::Seq { len, .. } => Shape::seq(len, units),
        Shape::Flat(_) => Shape::Flat(units),
    };
    Tensor::from_data(x.batch, shape, y)
}

/// Returns `dx` and accumulates into `dw`, `db`.
pub fn dense_backward(x: &Tensor, w: &[f64], dy: &Tensor, dw: &mut [f64], db: &mut [f64]) -> Tensor {
    let cin = x.shape.channels();
    let units = dy.shape.channels();
    let rows = x.rows();
    add_matmul_at_b(dw, &x.data, &dy.data, rows, cin, units);
    for row in dy.data.chunks_exact(units) {
        for (g, v) in db.iter_mut().zip(row) {
            *g += v;
        }
    }
    let dx = matmul_a_bt(&dy.data, w, rows, units, cin);
    Tensor::from_data(x.batch, x.shape, dx)
}

/// Geometry of a 1-D convolution; weights are laid out `[k][cin][cout]`.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub len_in: usize,
    pub cin: usize,
    pub len_out: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    pub fn new(len_in: usize, cin: usize, len_out: usize, cout: usize, kernel: usize, stride: usize, dilation: usize, padding: Padding) -> Self {
        let pad_left = match padding {
            Padding::Valid => 0,
            Padding::Same => {
                let span = (kernel - 1) * dilation + 1;
                let needed = ((len_out - 1) * stride + span).saturating_sub(len_in);
                needed / 2
            }
        };
        ConvGeom { len_in, cin, len_out, cout, kernel, stride, dilation, pad_left }
    }

    /// Input position read by output `o` at tap `k`, if inside the signal.
    fn tap(&self, o: usize, k: usize) -> Option<usize> {
        let p = (o * self.stride + k * self.dilation) as isize - self.pad_left as isize;
        (p >= 0 && (p as usize) < self.len_in).then_some(p as usize)
    }
}

pub fn conv1d_forward(x: &Tensor, w: &[f64], b: &[f64], g: &ConvGeom) -> Tensor {
    let mut y = Tensor::zeros(x.batch, Shape::seq(g.len_out, g.cout));
    for bt in 0..x.batch {
        let xi = x.item(bt);
        let yi = y.item_mut(bt);
        for o in 0..g.len_out {
            let out = &mut yi[o * g.cout..(o + 1) * g.cout];
            out.copy_from_slice(b);
            for k in 0..g.kernel {
                let Some(p) = g.tap(o, k) else { continue };
                let xrow = &xi[p * g.cin..(p + 1) * g.cin];
                for (c, xv) in xrow.iter().enumerate() {
                    let wrow = &w[(k * g.cin + c) * g.cout..(k * g.cin + c + 1) * g.cout];
                    for (ov, wv) in out.iter_mut().zip(wrow) {
                        *ov += xv * wv;
                    }
                }
            }
        }
    }
    y
}

pub fn conv1d_backward(x: &Tensor, w: &[f64], dy: &Tensor, g: &ConvGeom, dw: &mut [f64], db: &mut [f64]) -> Tensor {
    let mut dx = Tensor::zeros(x.batch, x.shape);
    for bt in 0..x.batch {
        let xi = x.item(bt);
        let dyi = dy.item(bt);
        let dxi = dx.item_mut(bt);
        for o in 0..g.len_out {
            let grow = &dyi[o * g.cout..(o + 1) * g.cout];
            for (acc, v) in db.iter_mut().zip(grow) {
                *acc += v;
            }
            for k in 0..g.kernel {
                let Some(p) = g.tap(o, k) else { continue };
                for c in 0..g.cin {
                    let base = (k * g.cin + c) * g.cout;
                    let wrow = &w[base..base + g.cout];
                    let dwrow = &mut dw[base..base + g.cout];
                    let xv = xi[p * g.cin + c];
                    let mut s = 0.0;
                    for f in 0..g.cout {
                        dwrow[f] += xv * grow[f];
                        s += wrow[f] * grow[f];
                    }
                    dxi[p * g.cin + c] += s;
                }
            }
        }
    }
    dx
}

/// Gated recurrent unit parameters: `w` is `cin x 3H`, `u` is `H x 3H`,
/// `b` is `3H`, gate order update, reset, candidate.
#[derive(Debug, Clone, Copy)]
pub struct GruParams<'a> {
    pub w: &'a [f64],
    pub u: &'a [f64],
    pub b: &'a [f64],
    pub hidden: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GruCache {
    /// Hidden states `h_0 ..= h_T`, each `batch x H`.
    h: Vec<Vec<f64>>,
    xs: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    n: Vec<Vec<f64>>,
    un: Vec<Vec<f64>>,
}

fn time_slice(x: &Tensor, t: usize) -> Vec<f64> {
    let c = x.shape.channels();
    let mut out = Vec::with_capacity(x.batch * c);
    for bt in 0..x.batch {
        out.extend_from_slice(&x.item(bt)[t * c..(t + 1) * c]);
    }
    out
}

/// Unrolls the cell from a zero state and returns the final hidden state.
pub fn gru_forward(x: &Tensor, p: GruParams<'_>) -> (Tensor, GruCache) {
    let len = x.shape.len().expect("GRU input is a sequence");
    let cin = x.shape.channels();
    let hd = p.hidden;
    let batch = x.batch;
    let mut cache = GruCache { h: vec![vec![0.0; batch * hd]], ..GruCache::default() };
    for t in 0..len {
        let xt = time_slice(x, t);
        let a = matmul(&xt, p.w, batch, cin, 3 * hd);
        let hprev = cache.h.last().expect("initial state");
        let u = matmul(hprev, p.u, batch, hd, 3 * hd);
        let mut z = vec![0.0; batch * hd];
        let mut r = vec![0.0; batch * hd];
        let mut n = vec![0.0; batch * hd];
        let mut un = vec![0.0; batch * hd];
        let mut h = vec![0.0; batch * hd];
        for bt in 0..batch {
            for j in 0..hd {
                let i = bt * hd + j;
                let g = bt * 3 * hd;
                z[i] = sigmoid(a[g + j] + p.b[j] + u[g + j]);
                r[i] = sigmoid(a[g + hd + j] + p.b[hd + j] + u[g + hd + j]);
                un[i] = u[g + 2 * hd + j];
                n[i] = libm::tanh(a[g + 2 * hd + j] + p.b[2 * hd + j] + r[i] * un[i]);
                h[i] = (1.0 - z[i]) * n[i] + z[i] * hprev[i];
            }
        }
        cache.xs.push(xt);
        cache.z.push(z);
        cache.r.push(r);
        cache.n.push(n);
        cache.un.push(un);
        cache.h.push(h);
    }
    let out = Tensor::from_data(batch, Shape::Flat(hd), cache.h.last().cloned().expect("state"));
    (out, cache)
}

/// Backpropagation through time. Accumulates into `dw`, `du`, `db`.
pub fn gru_backward(x: &Tensor, p: GruParams<'_>, cache: &GruCache, dy: &Tensor, dw: &mut [f64], du: &mut [f64], db: &mut [f64]) -> Tensor {
    let len = cache.xs.len();
    let cin = x.shape.channels();
    let hd = p.hidden;
    let batch = x.batch;
    let mut dx = Tensor::zeros(batch, x.shape);
    let mut dh = dy.data.clone();
    for t in (0..len).rev() {
        let (z, r, n, un, hprev) = (&cache.z[t], &cache.r[t], &cache.n[t], &cache.un[t], &cache.h[t]);
        let mut da = vec![0.0; batch * 3 * hd];
        let mut dug = vec![0.0; batch * 3 * hd];
        let mut dh_prev = vec![0.0; batch * hd];
        for bt in 0..batch {
            for j in 0..hd {
                let i = bt * hd + j;
                let g = bt * 3 * hd;
                let dz = dh[i] * (hprev[i] - n[i]);
                let dn = dh[i] * (1.0 - z[i]);
                dh_prev[i] = dh[i] * z[i];
                let dn_pre = dn * (1.0 - n[i] * n[i]);
                let dr_pre = dn_pre * un[i] * r[i] * (1.0 - r[i]);
                let dz_pre = dz * z[i] * (1.0 - z[i]);
                da[g + j] = dz_pre;
                da[g + hd + j] = dr_pre;
                da[g + 2 * hd + j] = dn_pre;
                dug[g + j] = dz_pre;
                dug[g + hd + j] = dr_pre;
                dug[g + 2 * hd + j] = dn_pre * r[i];
            }
        }
        add_matmul_at_b(dw, &cache.xs[t], &da, batch, cin, 3 * hd);
        add_matmul_at_b(du, hprev, &dug, batch, hd, 3 * hd);
        for row in da.chunks_exact(3 * hd) {
            for (g, v) in db.iter_mut().zip(row) {
                *g += v;
            }
        }
        let dxt = matmul_a_bt(&da, p.w, batch, 3 * hd, cin);
        for bt in 0..batch {
            dx.item_mut(bt)[t * cin..(t + 1) * cin].copy_from_slice(&dxt[bt * cin..(bt + 1) * cin]);
        }
        let dhu = matmul_a_bt(&dug, p.u, batch, 3 * hd, hd);
        for (a, b) in dh_prev.iter_mut().zip(&dhu) {
            *a += b;
        }
        dh = dh_prev;
    }
    dx
}

/// Scores each position by `x_l . w + bias_l`, softmaxes over positions and
/// returns the weighted sum together with the weights (`batch x len`).
pub fn attention_pool_forward(x: &Tensor, w: &[f64], bias: &[f64]) -> (Tensor, Vec<f64>) {
    let len = x.shape.len().expect("attention pool input is a sequence");
    let c = x.shape.channels();
    let mut y = Tensor::zeros(x.batch, Shape::Flat(c));
    let mut weights = vec![0.0; x.batch * len];
    for bt in 0..x.batch {
        let xi = x.item(bt);
        let a = &mut weights[bt * len..(bt + 1) * len];
        for (l, s) in a.iter_mut().enumerate() {
            *s = xi[l * c..(l + 1) * c].iter().zip(w).map(|(p, q)| p * q).sum::<f64>() + bias[l];
        }
        softmax_in_place(a);
        let yi = y.item_mut(bt);
        for (l, al) in a.iter().enumerate() {
            for (o, v) in yi.iter_mut().zip(&xi[l * c..(l + 1) * c]) {
                *o += al * v;
            }
        }
    }
    (y, weights)
}

pub fn attention_pool_backward(x: &Tensor, w: &[f64], weights: &[f64], dy: &Tensor, dw: &mut [f64], dbias: &mut [f64]) -> Tensor {
    let len = x.shape.len().expect("sequence");
    let c = x.shape.channels();
    let mut dx = Tensor::zeros(x.batch, x.shape);
    for bt in 0..x.batch {
        let xi = x.item(bt);
        let g = dy.item(bt);
        let a = &weights[bt * len..(bt + 1) * len];
        let da: Vec<f64> = (0..len).map(|l| xi[l * c..(l + 1) * c].iter().zip(g).map(|(p, q)| p * q).sum()).collect();
        let ds = softmax_backward(a, &da);
        let dxi = dx.item_mut(bt);
        for l in 0..len {
            dbias[l] += ds[l];
            for ch in 0..c {
                dw[ch] += ds[l] * xi[l * c + ch];
                dxi[l * c + ch] = a[l] * g[ch] + ds[l] * w[ch];
            }
        }
    }
    dx
}

pub fn global_avg_pool_forward(x: &Tensor) -> Tensor {
    let len = x.shape.len().expect("sequence");
    let c = x.shape.channels();
    let mut y = Tensor::zeros(x.batch, Shape::Flat(c));
    for bt in 0..x.batch {
        let xi = x.item(bt);
        let yi = y.item_mut(bt);
        for row in xi.chunks_exact(c) {
            for (o, v) in yi.iter_mut().zip(row) {
                *o += v / len as f64;
            }
        }
    }
    y
}

pub fn global_avg_pool_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let len = x.shape.len().expect("sequence");
    let c = x.shape.channels();
    let mut dx = Tensor::zeros(x.batch, x.shape);
    for bt in 0..x.batch {
        let g = dy.item(bt);
        for row in dx.item_mut(bt).chunks_exact_mut(c) {
            for (o, v) in row.iter_mut().zip(g) {
                *o = v / len as f64;
            }
        }
    }
    dx
}

/// Source window `[start, end)` for each output position. Shrinking averages
/// adaptive bins; growing repeats the nearest earlier position.
pub fn resample_bins(len_in: usize, len_out: usize) -> Vec<(usize, usize)> {
    (0..len_out)
        .map(|t| {
            let start = t * len_in / len_out;
            if len_in > len_out {
                (start, ((t + 1) * len_in).div_ceil(len_out))
            } else {
                (start, start + 1)
            }
        })
        .collect()
}

pub fn resample_forward(x: &Tensor, len_out: usize) -> Tensor {
    let len = x.shape.len().expect("sequence");
    let c = x.shape.channels();
    let bins = resample_bins(len, len_out);
    let mut y = Tensor::zeros(x.batch, Shape::seq(len_out, c));
    for bt in 0..x.batch {
        let xi = x.item(bt);
        let yi = y.item_mut(bt);
        for (t, &(s, e)) in bins.iter().enumerate() {
            let scale = 1.0 / (e - s) as f64;
            for l in s..e {
                for ch in 0..c {
                    yi[t * c + ch] += xi[l * c + ch] * scale;
                }
            }
        }
    }
    y
}

pub fn resample_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let len = x.shape.len().expect("sequence");
    let c = x.shape.channels();
    let len_out = dy.shape.len().expect("sequence");
    let bins = resample_bins(len, len_out);
    let mut dx = Tensor::zeros(x.batch, x.shape);
    for bt in 0..x.batch {
        let g = dy.item(bt);
        let dxi = dx.item_mut(bt);
        for (t, &(s, e)) in bins.iter().enumerate() {
            let scale = 1.0 / (e - s) as f64;
            for l in s..e {
                for ch in 0..c {
                    dxi[l * c + ch] += g[t * c + ch] * scale;
                }
            }
        }
    }
    dx
}

/// Concatenates along the channel axis.
pub fn concat_forward(parts: &[&Tensor], shape: Shape) -> Tensor {
    let batch = parts[0].batch;
    let rows = parts[0].shape.len().unwrap_or(1);
    let mut y = Tensor::zeros(batch, shape);
    let total = shape.channels();
    for bt in 0..batch {
        let yi = y.item_mut(bt);
        let mut offset = 0;
        for p in parts {
            let c = p.shape.channels();
            let pi = p.item(bt);
            for r in 0..rows {
                yi[r * total + offset..r * total + offset + c].copy_from_slice(&pi[r * c..(r + 1) * c]);
            }
            offset += c;
        }
    }
    y
}

pub fn concat_backward(shapes: &[Shape], dy: &Tensor) -> Vec<Tensor> {
    let rows = dy.shape.len().unwrap_or(1);
    let total = dy.shape.channels();
    let mut offset = 0;
    let mut out = Vec::with_capacity(shapes.len());
    for s in shapes {
        let c = s.channels();
        let mut d = Tensor::zeros(dy.batch, *s);
        for bt in 0..dy.batch {
            let g = dy.item(bt);
            let di = d.item_mut(bt);
            for r in 0..rows {
                di[r * c..(r + 1) * c].copy_from_slice(&g[r * total + offset..r * total + offset + c]);
            }
        }
        offset += c;
        out.push(d);
    }
    out
}
