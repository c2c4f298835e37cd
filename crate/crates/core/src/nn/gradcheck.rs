//! Central finite-difference verification of the analytic backward passes.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::fusion::{FusionConfig, FusionHead};
use super::network::{Mode, Network};
use super::ops::{cross_entropy, layer_norm, layer_norm_backward};
use super::tensor::Tensor;
use crate::graph::{build_graph, Activation, Attrs, LayerKind, NodeSpec, Shape};
use crate::rng::{seeded, standard_normal, SeededRng};

pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckKind {
    Dense,
    DilatedConv,
    StridedConv,
    Gru,
    AttentionPool,
    GlobalAvgPool,
    Resample,
    Add,
    Concat,
    Activation(Activation),
    Dropout,
    Reshape,
    LayerNorm,
    Fnn,
    FusionHead,
}

impl CheckKind {
    pub fn all() -> Vec<CheckKind> {
        let mut v = vec![
            CheckKind::Dense,
            CheckKind::DilatedConv,
            CheckKind::StridedConv,
            CheckKind::Gru,
            CheckKind::AttentionPool,
            CheckKind::GlobalAvgPool,
            CheckKind::Resample,
            CheckKind::Add,
            CheckKind::Concat,
            CheckKind::Dropout,
            CheckKind::Reshape,
            CheckKind::LayerNorm,
            CheckKind::Fnn,
            CheckKind::FusionHead,
        ];
        v.extend([Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::Gelu, Activation::Linear].map(CheckKind::Activation));
        v
    }
}

/// Relative error with a small absolute floor so that near-zero gradients
/// do not amplify rounding noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn randn(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}

/// Maximum relative error between analytic and numeric gradients for one
/// randomly instantiated layer kind.
pub fn grad_check(kind: CheckKind, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    match kind {
        CheckKind::LayerNorm => check_layer_norm(&mut rng),
        CheckKind::Fnn => check_fusion(&mut rng, true),
        CheckKind::FusionHead => check_fusion(&mut rng, false),
        _ => check_node(kind, &mut rng),
    }
}

fn single_node(kind: CheckKind) -> (Shape, Vec<NodeSpec>, Vec<(u32, u32)>) {
    let seq = Shape::seq(6, 3);
    let node = |k: LayerKind, a: Attrs| NodeSpec::new(2, k, a);
    let (input, spec) = match kind {
        CheckKind::Dense => (seq, node(LayerKind::Dense, Attrs::units(4))),
        CheckKind::DilatedConv => {
            let mut a = Attrs::conv(4, 3, 2);
            a.activation = Some(Activation::Tanh);
            (seq, node(LayerKind::Conv1D, a))
        }
        CheckKind::StridedConv => {
            let mut a = Attrs::conv(2, 2, 1);
            a.stride = Some(2);
            (Shape::seq(7, 3), node(LayerKind::Conv1D, a))
        }
        CheckKind::Gru => (Shape::seq(4, 3), node(LayerKind::GRU, Attrs::units(5))),
        CheckKind::AttentionPool => (seq, node(LayerKind::AttentionPool, Attrs::default())),
        CheckKind::GlobalAvgPool => (seq, node(LayerKind::GlobalAvgPool, Attrs::default())),
        CheckKind::Resample => (Shape::seq(7, 2), node(LayerKind::Resample, Attrs { length: Some(3), ..Attrs::default() })),
        CheckKind::Activation(f) => (seq, node(LayerKind::Activation, Attrs::activation(f))),
        CheckKind::Dropout => (seq, node(LayerKind::Dropout, Attrs::rate(0.3))),
        CheckKind::Reshape => (seq, node(LayerKind::Reshape, Attrs::shape(Shape::Flat(18)))),
        CheckKind::Add | CheckKind::Concat => {
            let k = if kind == CheckKind::Add { LayerKind::Add } else { LayerKind::Concat };
            let mut t = Attrs::conv(3, 1, 1);
            t.activation = Some(Activation::Tanh);
            let nodes =
                vec![NodeSpec::new(1, LayerKind::Input, Attrs::shape(seq)), NodeSpec::new(2, LayerKind::Conv1D, t), NodeSpec::new(3, k, Attrs::default())];
            return (seq, nodes, vec![(1, 2), (1, 3), (2, 3)]);
        }
        CheckKind::LayerNorm | CheckKind::Fnn | CheckKind::FusionHead => unreachable!("checked directly"),
    };
    (input, vec![NodeSpec::new(1, LayerKind::Input, Attrs::shape(input)), spec], vec![(1, 2)])
}

fn check_node(kind: CheckKind, rng: &mut SeededRng) -> f64 {
    let (input, nodes, edges) = single_node(kind);
    let out_id = nodes.last().expect("node").id;
    let graph = build_graph(nodes, edges, out_id).expect("check graph is valid");
    let mut net = Network::new(graph, rng).expect("instantiable");
    // Non-zero attention parameters so the softmax is not at its symmetric point.
    for p in net.all_params_mut() {
        for v in p.iter_mut() {
            *v += 0.3 * standard_normal(rng);
        }
    }
    let batch = 2;
    let x = Tensor::from_data(batch, input, randn(rng, batch * input.numel()));
    let mode = if kind == CheckKind::Dropout { Mode::Train } else { Mode::Eval };
    let probe = {
        let t = net.forward(&x, mode, &mut seeded(7)).expect("forward");
        randn(rng, t.output().data.len())
    };
    let loss = |net: &Network, x: &Tensor| -> f64 {
        let t = net.forward(x, mode, &mut seeded(7)).expect("forward");
        t.output().data.iter().zip(&probe).map(|(a, b)| a * b).sum()
    };
    let trace = net.forward(&x, mode, &mut seeded(7)).expect("forward");
    let out = trace.output();
    let seed = Tensor::from_data(out.batch, out.shape, probe.clone());
    let (grads, dx) = net.backward(&trace, vec![(out_id, seed)]);
    let analytic = net.flatten_grads(&grads);

    let mut worst: f64 = 0.0;
    for (gi, g) in analytic.iter().enumerate() {
        for (e, &ga) in g.iter().enumerate() {
            let orig = net.all_params_mut()[gi][e];
            net.all_params_mut()[gi][e] = orig + STEP;
            let up = loss(&net, &x);
            net.all_params_mut()[gi][e] = orig - STEP;
            let down = loss(&net, &x);
            net.all_params_mut()[gi][e] = orig;
            worst = worst.max(relative_error(ga, (up - down) / (2.0 * STEP)));
        }
    }
    let mut xp = x.clone();
    for e in 0..x.data.len() {
        xp.data[e] = x.data[e] + STEP;
        let up = loss(&net, &xp);
        xp.data[e] = x.data[e] - STEP;
        let down = loss(&net, &xp);
        xp.data[e] = x.data[e];
        worst = worst.max(relative_error(dx.data[e], (up - down) / (2.0 * STEP)));
    }
    worst
}

fn check_layer_norm(rng: &mut SeededRng) -> f64 {
    let (rows, dim) = (3, 5);
    let x = randn(rng, rows * dim);
    let gamma: Vec<f64> = (0..dim).map(|_| 1.0 + 0.5 * standard_normal(rng)).collect();
    let beta = randn(rng, dim);
    let probe = randn(rng, rows * dim);
    let loss = |x: &[f64], g: &[f64], b: &[f64]| -> f64 { layer_norm(x, rows, dim, g, b).0.iter().zip(&probe).map(|(a, p)| a * p).sum() };
    let (_, cache) = layer_norm(&x, rows, dim, &gamma, &beta);
    let (dx, dg, db) = layer_norm_backward(&probe, &cache, rows, dim, &gamma);
    let mut worst: f64 = 0.0;
    let mut bufs = [x.clone(), gamma.clone(), beta.clone()];
    for (which, analytic) in [dx, dg, db].iter().enumerate() {
        for e in 0..analytic.len() {
            let orig = bufs[which][e];
            bufs[which][e] = orig + STEP;
            let up = loss(&bufs[0], &bufs[1], &bufs[2]);
            bufs[which][e] = orig - STEP;
            let down = loss(&bufs[0], &bufs[1], &bufs[2]);
            bufs[which][e] = orig;
            worst = worst.max(relative_error(analytic[e], (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

/// Checks the whole head under cross-entropy, or only its feed-forward and
/// classifier parameters when `fnn_only` is set.
fn check_fusion(rng: &mut SeededRng, fnn_only: bool) -> f64 {
    let (n, dt) = (3, 4);
    let cfg = FusionConfig { heads: 2, model_dim: Some(8), hidden: (6, 5), classes: 3, residual: true, token_dropout: 0.0 };
    let mut head = FusionHead::new(n, dt, &cfg, rng).expect("valid config");
    for p in head.params.iter_mut() {
        for v in p.value.iter_mut() {
            *v += 0.1 * standard_normal(rng);
        }
    }
    let batch = 2;
    let x = Tensor::from_data(batch, Shape::seq(n, dt), randn(rng, batch * n * dt));
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..3)).collect();
    let loss = |h: &FusionHead, x: &Tensor| -> f64 {
        let (logits, _) = h.forward(x).expect("forward");
        cross_entropy(&logits.data, &labels, 3).0
    };
    let (logits, cache) = head.forward(&x).expect("forward");
    let (_, dl) = cross_entropy(&logits.data, &labels, 3);
    let (grads, dx) = head.backward(&cache, &Tensor::from_data(batch, Shape::Flat(3), dl));
    let first = if fnn_only { 6 } else { 0 };
    let mut worst: f64 = 0.0;
    for (gi, g) in grads.iter().enumerate().skip(first) {
        for (e, &ga) in g.iter().enumerate() {
            let orig = head.params[gi].value[e];
            head.params[gi].value[e] = orig + STEP;
            let up = loss(&head, &x);
            head.params[gi].value[e] = orig - STEP;
            let down = loss(&head, &x);
            head.params[gi].value[e] = orig;
            worst = worst.max(relative_error(ga, (up - down) / (2.0 * STEP)));
        }
    }
    if !fnn_only {
        let mut xp = x.clone();
        for e in 0..x.data.len() {
            xp.data[e] = x.data[e] + STEP;
            let up = loss(&head, &xp);
            xp.data[e] = x.data[e] - STEP;
            let down = loss(&head, &xp);
            xp.data[e] = x.data[e];
            worst = worst.max(relative_error(dx.data[e], (up - down) / (2.0 * STEP)));
        }
    }
    worst
}
