//! Parameterised encoder graphs. Each template ends in a dense token
//! projection (the fusion node) followed by a standalone classifier.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::graph::{build_graph, Activation, Attrs, GraphError, LayerGraph, LayerKind, NodeId, NodeSpec, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenseEncoderConfig {
    pub hidden: usize,
    pub token_dim: usize,
    pub classes: usize,
    pub dropout: f64,
}

impl Default for DenseEncoderConfig {
    fn default() -> Self {
        DenseEncoderConfig { hidden: 32, token_dim: 16, classes: 2, dropout: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalEncoderConfig {
    pub filters: usize,
    pub kernel: usize,
    /// Dilations of the stacked residual block.
    pub dilations: Vec<usize>,
    /// One convolution-plus-GRU branch per entry.
    pub gru_dilations: Vec<usize>,
    pub gru_units: usize,
    pub token_dim: usize,
    pub classes: usize,
    pub dropout: f64,
}

impl Default for TemporalEncoderConfig {
    fn default() -> Self {
        TemporalEncoderConfig {
            filters: 16,
            kernel: 3,
            dilations: vec![1, 2, 4],
            gru_dilations: vec![1, 2],
            gru_units: 16,
            token_dim: 16,
            classes: 2,
            dropout: 0.5,
        }
    }
}

struct Builder {
    nodes: Vec<NodeSpec>,
    edges: Vec<(NodeId, NodeId)>,
}

impl Builder {
    fn new(input: Shape) -> Self {
        Builder { nodes: vec![NodeSpec::new(1, LayerKind::Input, Attrs::shape(input))], edges: Vec::new() }
    }

    fn add(&mut self, kind: LayerKind, attrs: Attrs, inputs: &[NodeId]) -> NodeId {
        let id = self.nodes.len() as NodeId + 1;
        self.nodes.push(NodeSpec::new(id, kind, attrs));
        self.edges.extend(inputs.iter().map(|&i| (i, id)));
        id
    }

    fn dropout(&mut self, rate: f64, from: NodeId) -> NodeId {
        if rate > 0.0 {
            self.add(LayerKind::Dropout, Attrs::rate(rate), &[from])
        } else {
            from
        }
    }

    /// Token projection, classifier and output; returns the finished graph.
    fn finish(mut self, from: NodeId, token_dim: usize, classes: usize) -> Result<LayerGraph, GraphError> {
        let token = self.add(LayerKind::Dense, Attrs::units(token_dim), &[from]);
        let logits = self.add(LayerKind::Dense, Attrs::units(classes), &[token]);
        self.add(LayerKind::Output, Attrs::default(), &[logits]);
        build_graph(self.nodes, self.edges, token)
    }
}

fn with_activation(mut a: Attrs, f: Activation) -> Attrs {
    a.activation = Some(f);
    a
}

/// Per-position dense layer, attention pooling over positions, token projection.
pub fn dense_encoder(input: Shape, cfg: &DenseEncoderConfig) -> Result<LayerGraph, GraphError> {
    let mut b = Builder::new(input);
    let h = b.add(LayerKind::Dense, with_activation(Attrs::units(cfg.hidden), Activation::Relu), &[1]);
    let pooled = if input.is_seq() { b.add(LayerKind::AttentionPool, Attrs::default(), &[h]) } else { h };
    let d = b.dropout(cfg.dropout, pooled);
    b.finish(d, cfg.token_dim, cfg.classes)
}

/// Stacked dilated convolutions joined by residual adds, followed by an
/// attention-pool branch and parallel dilated-convolution GRU branches whose
/// outputs are concatenated and projected to the token.
pub fn temporal_encoder(input: Shape, cfg: &TemporalEncoderConfig) -> Result<LayerGraph, GraphError> {
    let mut b = Builder::new(input);
    let conv = |d: usize| with_activation(Attrs::conv(cfg.filters, cfg.kernel, d), Activation::Relu);
    let mut dils = cfg.dilations.iter();
    let first = *dils.next().unwrap_or(&1);
    let mut trunk = b.add(LayerKind::Conv1D, conv(first), &[1]);
    for &d in dils {
        let c = b.add(LayerKind::Conv1D, conv(d), &[trunk]);
        trunk = b.add(LayerKind::Add, Attrs::default(), &[trunk, c]);
    }
    let mut heads = vec![b.add(LayerKind::AttentionPool, Attrs::default(), &[trunk])];
    for &d in &cfg.gru_dilations {
        let c = b.add(LayerKind::Conv1D, conv(d), &[trunk]);
        heads.push(b.add(LayerKind::GRU, Attrs::units(cfg.gru_units), &[c]));
    }
    let joined = if heads.len() > 1 { b.add(LayerKind::Concat, Attrs::default(), &heads) } else { heads[0] };
    let d = b.dropout(cfg.dropout, joined);
    b.finish(d, cfg.token_dim, cfg.classes)
}

/// Input, `depth` dense layers, output: the plain chain used by search tests.
pub fn dense_chain(input_dim: usize, depth: usize, units: usize) -> Result<LayerGraph, GraphError> {
    let mut b = Builder::new(Shape::Flat(input_dim));
    let mut last = 1;
    for _ in 0..depth {
        last = b.add(LayerKind::Dense, Attrs::units(units), &[last]);
    }
    let out = b.add(LayerKind::Output, Attrs::default(), &[last]);
    build_graph(b.nodes, b.edges, out)
}

/// The first attention-pool node, used for region ranking.
pub fn attention_node(graph: &LayerGraph) -> Option<NodeId> {
    graph.topo_order().iter().copied().find(|&id| graph.node(id).is_some_and(|n| n.kind == LayerKind::AttentionPool))
}
