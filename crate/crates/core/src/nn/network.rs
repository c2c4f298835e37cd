use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::fusion::{FusionCache, FusionConfig, FusionHead};
use super::layers::*;
use super::ops::{activate, activate_grad};
use super::param::{zero_grads, Param};
use super::tensor::Tensor;
use super::NnError;
use crate::graph::{LayerGraph, LayerKind, LayerNode, NodeId, Shape};

/// Parameter gradients keyed like [`Network::params`].
pub type Grads = BTreeMap<NodeId, Vec<Vec<f64>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
enum Cache {
    Gru(GruCache),
    Attention(Vec<f64>),
    Dropout(Vec<f64>),
    Fusion(FusionCache),
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: BTreeMap<NodeId, Tensor>,
    pre: BTreeMap<NodeId, Tensor>,
    caches: BTreeMap<NodeId, Cache>,
    output: NodeId,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        &self.acts[&self.output]
    }

    pub fn activation(&self, id: NodeId) -> Option<&Tensor> {
        self.acts.get(&id)
    }

    /// Per-position weights of an attention-pool node, `batch x len`.
    pub fn attention_weights(&self, id: NodeId) -> Option<&[f64]> {
        match self.caches.get(&id) {
            Some(Cache::Attention(w)) => Some(w),
            _ => None,
        }
    }

    pub fn fusion_cache(&self, id: NodeId) -> Option<&FusionCache> {
        match self.caches.get(&id) {
            Some(Cache::Fusion(c)) => Some(c),
            _ => None,
        }
    }
}

/// A layer graph with instantiated parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkDoc", into = "NetworkDoc")]
pub struct Network {
    graph: LayerGraph,
    params: BTreeMap<NodeId, Vec<Param>>,
    heads: BTreeMap<NodeId, FusionHead>,
}

/// Serialised form of a [`Network`]; checked against the graph on load.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    graph: LayerGraph,
    params: BTreeMap<NodeId, Vec<Param>>,
    heads: BTreeMap<NodeId, FusionHead>,
}

impl From<Network> for NetworkDoc {
    fn from(n: Network) -> Self {
        NetworkDoc { graph: n.graph, params: n.params, heads: n.heads }
    }
}

impl TryFrom<NetworkDoc> for Network {
    type Error = NnError;

    fn try_from(doc: NetworkDoc) -> Result<Self, NnError> {
        let fresh = Network::new(doc.graph, &mut crate::rng::seeded(0))?;
        let layout = |p: &[Param]| p.iter().map(|p| (p.name.clone(), p.dims.clone())).collect::<Vec<_>>();
        let valid = |p: &Param| p.value.len() == p.dims.iter().product::<usize>() && p.value.iter().all(|v| v.is_finite());
        let same_params = fresh.params.len() == doc.params.len()
            && fresh.params.iter().all(|(id, ps)| doc.params.get(id).is_some_and(|q| layout(ps) == layout(q) && q.iter().all(valid)));
        let same_heads = fresh.heads.len() == doc.heads.len()
            && fresh.heads.iter().all(|(id, h)| {
                doc.heads.get(id).is_some_and(|g| {
                    let mut g0 = g.clone();
                    g0.params.clone_from(&h.params);
                    g0 == *h && layout(&h.params) == layout(&g.params) && g.params.iter().all(valid)
                })
            });
        if !(same_params && same_heads) {
            return Err(NnError::InvalidConfig("stored parameters do not match the graph"));
        }
        Ok(Network { graph: fresh.graph, params: doc.params, heads: doc.heads })
    }
}

fn fusion_config(node: &LayerNode) -> FusionConfig {
    let a = &node.attrs;
    let d = FusionConfig::default();
    FusionConfig {
        heads: a.heads.unwrap_or(d.heads),
        model_dim: a.model_dim,
        hidden: a.hidden.unwrap_or(d.hidden),
        classes: a.classes.unwrap_or(d.classes),
        residual: d.residual,
        token_dropout: a.rate.unwrap_or(0.0),
    }
}

impl Network {
    pub fn new<R: Rng + ?Sized>(graph: LayerGraph, rng: &mut R) -> Result<Self, NnError> {
        let mut params = BTreeMap::new();
        let mut heads = BTreeMap::new();
        for &id in graph.topo_order() {
            let node = graph.node(id).expect("ordered node exists");
            let ins: Vec<Shape> = graph.inputs_of(id).iter().map(|i| graph.node(*i).expect("input").out_shape).collect();
            let out = node.out_shape;
            let p = match node.kind {
                LayerKind::Dense => {
                    let (cin, units) = (ins[0].channels(), out.channels());
                    vec![Param::glorot("w", &[cin, units], cin, units, rng), Param::zeros("b", &[units])]
                }
                LayerKind::Conv1D => {
                    let k = node.attrs.kernel.unwrap_or(1);
                    let (cin, cout) = (ins[0].channels(), out.channels());
                    vec![Param::glorot("w", &[k, cin, cout], k * cin, k * cout, rng), Param::zeros("b", &[cout])]
                }
                LayerKind::GRU => {
                    let (cin, h) = (ins[0].channels(), out.channels());
                    vec![Param::glorot("w", &[cin, 3 * h], cin, h, rng), Param::glorot("u", &[h, 3 * h], h, h, rng), Param::zeros("b", &[3 * h])]
                }
                LayerKind::AttentionPool => {
                    let (len, c) = (ins[0].len().unwrap_or(1), ins[0].channels());
                    vec![Param::zeros("w", &[c]), Param::zeros("bias", &[len])]
                }
                LayerKind::FusionHead => {
                    let (n, dt) = match ins[0] {
                        Shape::Seq { len, channels } => (len, channels),
                        s => return Err(NnError::TokenDimMismatch { expected: Shape::seq(1, s.numel()), found: s }),
                    };
                    heads.insert(id, FusionHead::new(n, dt, &fusion_config(node), rng)?);
                    continue;
                }
                _ => continue,
            };
            params.insert(id, p);
        }
        Ok(Network { graph, params, heads })
    }

    pub fn graph(&self) -> &LayerGraph {
        &self.graph
    }

    /// Parameters of every parameterised node except fusion heads.
    pub fn params(&self) -> &BTreeMap<NodeId, Vec<Param>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<NodeId, Vec<Param>> {
        &mut self.params
    }

    pub fn fusion_heads(&self) -> &BTreeMap<NodeId, FusionHead> {
        &self.heads
    }

    fn node_params(&self, id: NodeId) -> &[Param] {
        self.params.get(&id).map(Vec::as_slice).or_else(|| self.heads.get(&id).map(|h| h.params.as_slice())).unwrap_or(&[])
    }

    /// Every parameter of the network as `(node, param)` in a stable order.
    pub fn all_params(&self) -> Vec<(NodeId, &Param)> {
        let mut ids: Vec<NodeId> = self.params.keys().chain(self.heads.keys()).copied().collect();
        ids.sort_unstable();
        ids.into_iter().flat_map(|id| self.node_params(id).iter().map(move |p| (id, p))).collect()
    }

    /// Mutable parameter buffers in the order of [`Network::all_params`].
    pub fn all_params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut refs: Vec<(NodeId, &mut Vec<Param>)> =
            self.params.iter_mut().map(|(k, v)| (*k, v)).chain(self.heads.iter_mut().map(|(k, h)| (*k, &mut h.params))).collect();
        refs.sort_by_key(|(k, _)| *k);
        refs.into_iter().flat_map(|(_, ps)| ps.iter_mut().map(|p| &mut p.value)).collect()
    }

    /// Flattens gradients into the order of [`Network::all_params`].
    pub fn flatten_grads(&self, grads: &Grads) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let mut ids: Vec<NodeId> = self.params.keys().chain(self.heads.keys()).copied().collect();
        ids.sort_unstable();
        for id in ids {
            match grads.get(&id) {
                Some(g) => out.extend(g.iter().cloned()),
                None => out.extend(zero_grads(self.node_params(id))),
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.all_params().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn forward<R: Rng + ?Sized>(&self, input: &Tensor, mode: Mode, rng: &mut R) -> Result<Trace, NnError> {
        let g = &self.graph;
        let expected = g.input_shape();
        if input.shape != expected {
            return Err(NnError::ShapeMismatch { node: g.input_id(), expected, found: input.shape });
        }
        let mut trace = Trace { acts: BTreeMap::new(), pre: BTreeMap::new(), caches: BTreeMap::new(), output: g.input_id() };
        for &id in g.topo_order() {
            let node = g.node(id).expect("ordered node exists");
            let ins = g.inputs_of(id);
            let x = ins.first().map(|i| &trace.acts[i]);
            let p = self.node_params(id);
            let out = match node.kind {
                LayerKind::Input => input.clone(),
                LayerKind::Dense => {
                    let y = dense_forward(x.expect("arity"), &p[0].value, &p[1].value, node.out_shape.channels());
                    self.fused_activation(node, y, &mut trace)
                }
                LayerKind::Conv1D => {
                    let y = conv1d_forward(x.expect("arity"), &p[0].value, &p[1].value, &self.geom(node, x.expect("arity").shape));
                    self.fused_activation(node, y, &mut trace)
                }
                LayerKind::GRU => {
                    let (y, cache) = gru_forward(x.expect("arity"), gru_params(p, node));
                    trace.caches.insert(id, Cache::Gru(cache));
                    y
                }
                LayerKind::AttentionPool => {
                    let (y, w) = attention_pool_forward(x.expect("arity"), &p[0].value, &p[1].value);
                    trace.caches.insert(id, Cache::Attention(w));
                    y
                }
                LayerKind::GlobalAvgPool => global_avg_pool_forward(x.expect("arity")),
                LayerKind::Resample => resample_forward(x.expect("arity"), node.out_shape.len().expect("sequence")),
                LayerKind::Add => {
                    let mut y = trace.acts[&ins[0]].clone();
                    for i in &ins[1..] {
                        y.add_assign(&trace.acts[i]);
                    }
                    y
                }
                LayerKind::Concat => {
                    let parts: Vec<&Tensor> = ins.iter().map(|i| &trace.acts[i]).collect();
                    concat_forward(&parts, node.out_shape)
                }
                LayerKind::Activation => {
                    let x = x.expect("arity");
                    let f = node.attrs.activation.expect("validated");
                    Tensor::from_data(x.batch, x.shape, x.data.iter().map(|v| activate(f, *v)).collect())
                }
                LayerKind::Dropout => {
                    let x = x.expect("arity");
                    let rate = node.attrs.rate.unwrap_or(0.0);
                    if mode == Mode::Train && rate > 0.0 {
                        let keep = 1.0 / (1.0 - rate);
                        let mask: Vec<f64> = (0..x.data.len()).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
                        let y = Tensor::from_data(x.batch, x.shape, x.data.iter().zip(&mask).map(|(a, m)| a * m).collect());
                        trace.caches.insert(id, Cache::Dropout(mask));
                        y
                    } else {
                        x.clone()
                    }
                }
                LayerKind::Reshape => {
                    let x = x.expect("arity");
                    Tensor::from_data(x.batch, node.out_shape, x.data.clone())
                }
                LayerKind::FusionHead => {
                    let head = &self.heads[&id];
                    let (y, cache) = if mode == Mode::Train { head.forward_train(x.expect("arity"), rng)? } else { head.forward(x.expect("arity"))? };
                    trace.caches.insert(id, Cache::Fusion(cache));
                    y
                }
                LayerKind::Output => x.expect("arity").clone(),
            };
            if !out.is_finite() {
                return Err(NnError::NonFiniteActivation { node: id });
            }
            trace.acts.insert(id, out);
            trace.output = id;
        }
        if let Some(o) = g.output_id() {
            trace.output = o;
        }
        Ok(trace)
    }

    fn geom(&self, node: &LayerNode, input: Shape) -> ConvGeom {
        let (len_in, cin) = (input.len().expect("sequence"), input.channels());
        let a = &node.attrs;
        ConvGeom::new(
            len_in,
            cin,
            node.out_shape.len().expect("sequence"),
            node.out_shape.channels(),
            a.kernel.unwrap_or(1),
            a.stride(),
            a.dilation(),
            a.padding(),
        )
    }

    fn fused_activation(&self, node: &LayerNode, y: Tensor, trace: &mut Trace) -> Tensor {
        match node.attrs.activation {
            Some(f) => {
                let out = Tensor::from_data(y.batch, y.shape, y.data.iter().map(|v| activate(f, *v)).collect());
                trace.pre.insert(node.id, y);
                out
            }
            None => y,
        }
    }

    /// Reverse pass. `seeds` are upstream gradients injected at arbitrary
    /// nodes; returns the parameter gradients and the gradient at the input.
    pub fn backward(&self, trace: &Trace, seeds: Vec<(NodeId, Tensor)>) -> (Grads, Tensor) {
        let g = &self.graph;
        let mut upstream: BTreeMap<NodeId, Tensor> = BTreeMap::new();
        for (id, t) in seeds {
            accumulate(&mut upstream, id, t);
        }
        let mut grads = Grads::new();
        let input = g.input_id();
        for &id in g.topo_order().iter().rev() {
            if id == input {
                break;
            }
            let Some(mut dy) = upstream.remove(&id) else { continue };
            let node = g.node(id).expect("ordered node exists");
            let ins = g.inputs_of(id);
            let x = ins.first().map(|i| &trace.acts[i]);
            let p = self.node_params(id);
            if let (Some(f), Some(pre)) = (node.attrs.activation, trace.pre.get(&id)) {
                let out = &trace.acts[&id];
                for ((d, a), b) in dy.data.iter_mut().zip(&pre.data).zip(&out.data) {
                    *d *= activate_grad(f, *a, *b);
                }
            }
            match node.kind {
                LayerKind::Input => {}
                LayerKind::Dense => {
                    let mut gr = zero_grads(p);
                    let (gw, rest) = gr.split_at_mut(1);
                    let dx = dense_backward(x.expect("arity"), &p[0].value, &dy, &mut gw[0], &mut rest[0]);
                    grads.insert(id, gr);
                    accumulate(&mut upstream, ins[0], dx);
                }
                LayerKind::Conv1D => {
                    let mut gr = zero_grads(p);
                    let (gw, rest) = gr.split_at_mut(1);
                    let x = x.expect("arity");
                    let dx = conv1d_backward(x, &p[0].value, &dy, &self.geom(node, x.shape), &mut gw[0], &mut rest[0]);
                    grads.insert(id, gr);
                    accumulate(&mut upstream, ins[0], dx);
                }
                LayerKind::GRU => {
                    let Some(Cache::Gru(cache)) = trace.caches.get(&id) else { unreachable!("GRU cache") };
                    let mut gr = zero_grads(p);
                    let [gw, gu, gb] = &mut gr[..] else { unreachable!("GRU params") };
                    let dx = gru_backward(x.expect("arity"), gru_params(p, node), cache, &dy, gw, gu, gb);
                    grads.insert(id, gr);
                    accumulate(&mut upstream, ins[0], dx);
                }
                LayerKind::AttentionPool => {
                    let Some(Cache::Attention(w)) = trace.caches.get(&id) else { unreachable!("attention cache") };
                    let mut gr = zero_grads(p);
                    let (gw, rest) = gr.split_at_mut(1);
                    let dx = attention_pool_backward(x.expect("arity"), &p[0].value, w, &dy, &mut gw[0], &mut rest[0]);
                    grads.insert(id, gr);
                    accumulate(&mut upstream, ins[0], dx);
                }
                LayerKind::GlobalAvgPool => accumulate(&mut upstream, ins[0], global_avg_pool_backward(x.expect("arity"), &dy)),
                LayerKind::Resample => accumulate(&mut upstream, ins[0], resample_backward(x.expect("arity"), &dy)),
                LayerKind::Add => {
                    for i in &ins {
                        accumulate(&mut upstream, *i, dy.clone());
                    }
                }
                LayerKind::Concat => {
                    let shapes: Vec<Shape> = ins.iter().map(|i| trace.acts[i].shape).collect();
                    for (i, d) in ins.iter().zip(concat_backward(&shapes, &dy)) {
                        accumulate(&mut upstream, *i, d);
                    }
                }
                LayerKind::Activation => {
                    let x = x.expect("arity");
                    let f = node.attrs.activation.expect("validated");
                    let y = &trace.acts[&id];
                    for ((d, a), b) in dy.data.iter_mut().zip(&x.data).zip(&y.data) {
                        *d *= activate_grad(f, *a, *b);
                    }
                    accumulate(&mut upstream, ins[0], dy);
                }
                LayerKind::Dropout => {
                    if let Some(Cache::Dropout(mask)) = trace.caches.get(&id) {
                        dy.data.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
                    }
                    accumulate(&mut upstream, ins[0], dy);
                }
                LayerKind::Reshape => {
                    let shape = x.expect("arity").shape;
                    accumulate(&mut upstream, ins[0], Tensor::from_data(dy.batch, shape, dy.data));
                }
                LayerKind::FusionHead => {
                    let Some(Cache::Fusion(cache)) = trace.caches.get(&id) else { unreachable!("fusion cache") };
                    let (gr, dx) = self.heads[&id].backward(cache, &dy);
                    grads.insert(id, gr);
                    accumulate(&mut upstream, ins[0], dx);
                }
                LayerKind::Output => accumulate(&mut upstream, ins[0], dy),
            }
        }
        let dinput = upstream.remove(&input).unwrap_or_else(|| Tensor::zeros(trace.acts[&input].batch, trace.acts[&input].shape));
        (grads, dinput)
    }
}

fn gru_params<'a>(p: &'a [Param], node: &LayerNode) -> GruParams<'a> {
    GruParams { w: &p[0].value, u: &p[1].value, b: &p[2].value, hidden: node.out_shape.channels() }
}

fn accumulate(map: &mut BTreeMap<NodeId, Tensor>, id: NodeId, t: Tensor) {
    match map.get_mut(&id) {
        Some(acc) => acc.add_assign(&t),
        None => {
            map.insert(id, t);
        }
    }
}
