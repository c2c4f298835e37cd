//! Layer graphs: the substrate the connection search rewrites.
//!
//! A [`LayerGraph`] is a validated DAG of typed layer nodes with inferred
//! output shapes. Graphs are immutable values; [`insert_connection`] returns a
//! new graph with the requested residual or concatenate connection wired in,
//! synthesising adapter nodes where shapes disagree.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Input,
    Dense,
    Conv1D,
    GRU,
    Add,
    Concat,
    GlobalAvgPool,
    Activation,
    Dropout,
    Reshape,
    AttentionPool,
    FusionHead,
    Output,
    /// Temporal resampling adapter: adaptive average pooling when shrinking,
    /// nearest-neighbour repetition when growing.
    Resample,
}

impl LayerKind {
    /// Kinds whose output shape does not depend on the input channel count.
    fn absorbs_channels(self) -> bool {
        matches!(self, LayerKind::Dense | LayerKind::Conv1D | LayerKind::GRU | LayerKind::FusionHead)
    }

    fn is_merge(self) -> bool {
        matches!(self, LayerKind::Add | LayerKind::Concat)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Activation tensor shape, excluding the batch dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub enum Shape {
    /// `len` positions (time points or regions) by `channels` features.
    Seq {
        len: usize,
        channels: usize,
    },
    Flat(usize),
}

impl Shape {
    pub fn seq(len: usize, channels: usize) -> Self {
        Shape::Seq { len, channels }
    }

    pub fn numel(self) -> usize {
        match self {
            Shape::Seq { len, channels } => len * channels,
            Shape::Flat(d) => d,
        }
    }

    /// Channel count of a sequence, or the dimension of a flat vector.
    pub fn channels(self) -> usize {
        match self {
            Shape::Seq { channels, .. } => channels,
            Shape::Flat(d) => d,
        }
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(self) -> Option<usize> {
        match self {
            Shape::Seq { len, .. } => Some(len),
            Shape::Flat(_) => None,
        }
    }

    pub fn is_seq(self) -> bool {
        matches!(self, Shape::Seq { .. })
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = String;

    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        match v.as_slice() {
            [d] => Ok(Shape::Flat(*d)),
            [len, channels] => Ok(Shape::seq(*len, *channels)),
            _ => Err(alloc::format!("shape must have 1 or 2 dimensions, got {}", v.len())),
        }
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        match s {
            Shape::Seq { len, channels } => vec![len, channels],
            Shape::Flat(d) => vec![d],
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Seq { len, channels } => write!(f, "{len}x{channels}"),
            Shape::Flat(d) => write!(f, "{d}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Gelu,
    Linear,
}

/// Kind-specific layer attributes. Which fields are required depends on the
/// node kind; see [`LayerNode::validate_attrs`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Attrs {
    /// Output features of Dense, filters of Conv1D, hidden size of GRU.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub units: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dilation: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub padding: Option<Padding>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    /// Dropout rate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    /// Input shape, or Reshape target.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<Shape>,
    /// Resample target length.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_dim: Option<usize>,
    /// FusionHead feed-forward widths.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
}

impl Attrs {
    pub fn units(units: usize) -> Self {
        Attrs { units: Some(units), ..Attrs::default() }
    }

    pub fn conv(filters: usize, kernel: usize, dilation: usize) -> Self {
        Attrs { units: Some(filters), kernel: Some(kernel), stride: Some(1), dilation: Some(dilation), padding: Some(Padding::Same), ..Attrs::default() }
    }

    pub fn activation(a: Activation) -> Self {
        Attrs { activation: Some(a), ..Attrs::default() }
    }

    pub fn shape(s: Shape) -> Self {
        Attrs { shape: Some(s), ..Attrs::default() }
    }

    pub fn rate(r: f64) -> Self {
        Attrs { rate: Some(r), ..Attrs::default() }
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(1)
    }

    pub fn dilation(&self) -> usize {
        self.dilation.unwrap_or(1)
    }

    pub fn padding(&self) -> Padding {
        self.padding.unwrap_or(Padding::Same)
    }
}

/// A layer as declared in a graph document, before shape inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    pub kind: LayerKind,
    #[serde(default)]
    pub attrs: Attrs,
    /// Set on adapter and merge nodes created by connection insertion.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub synthetic: bool,
}

impl NodeSpec {
    pub fn new(id: NodeId, kind: LayerKind, attrs: Attrs) -> Self {
        NodeSpec { id, kind, attrs, synthetic: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub id: NodeId,
    pub kind: LayerKind,
    pub attrs: Attrs,
    pub synthetic: bool,
    pub out_shape: Shape,
}

impl LayerNode {
    pub fn spec(&self) -> NodeSpec {
        NodeSpec { id: self.id, kind: self.kind, attrs: self.attrs.clone(), synthetic: self.synthetic }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConnectionType {
    Residual,
    Concatenate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConnectionSpec {
    pub src: NodeId,
    pub dst: NodeId,
    pub ctype: ConnectionType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    /// First physical edge of a searched connection.
    pub ncs: bool,
}

/// Serialisable structural content of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDoc {
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<(NodeId, NodeId)>,
    pub fusion_index: NodeId,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ncs_edges: Vec<(NodeId, NodeId)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub connections: Vec<ConnectionSpec>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("unknown node id {0}")]
    UnknownId(NodeId),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(NodeId, NodeId),
    #[error("graph contains a cycle through node {0}")]
    CycleDetected(NodeId),
    #[error("graph must have exactly one Input node, found {0}")]
    InputCount(usize),
    #[error("fusion node {0} is not reachable from the input")]
    FusionUnreachable(NodeId),
    #[error("node {node} ({kind}) expects {expected} input(s), found {found}")]
    Arity { node: NodeId, kind: LayerKind, expected: &'static str, found: usize },
    #[error("node {node}: missing attribute `{attr}`")]
    MissingAttr { node: NodeId, attr: &'static str },
    #[error("node {node}: invalid attribute `{attr}`")]
    InvalidAttr { node: NodeId, attr: &'static str },
    #[error("shape inference failed at node {node}: {reason}")]
    ShapeInferenceFailure { node: NodeId, reason: String },
    #[error("({src}, {dst}) is not a candidate connection")]
    NotACandidate { src: NodeId, dst: NodeId },
    #[error("no adapter can connect node {src} to node {dst}: {reason}")]
    AdapterSynthesisFailure { src: NodeId, dst: NodeId, reason: String },
}

/// A validated, shape-annotated directed acyclic layer graph. Serialises as
/// its [`GraphDoc`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GraphDoc", into = "GraphDoc")]
pub struct LayerGraph {
    nodes: Vec<LayerNode>,
    edges: Vec<Edge>,
    fusion_index: NodeId,
    connections: Vec<ConnectionSpec>,
    order: Vec<NodeId>,
}

/// Structural equality: nodes, edges (in input order), fusion index and the
/// record of searched connections.
impl PartialEq for LayerGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges && self.fusion_index == other.fusion_index && self.connections == other.connections
    }
}

/// Validate a declared graph and infer shapes.
pub fn build_graph(nodes: Vec<NodeSpec>, edges: Vec<(NodeId, NodeId)>, fusion_index: NodeId) -> Result<LayerGraph, GraphError> {
    let edges = edges.into_iter().map(|(src, dst)| Edge { src, dst, ncs: false }).collect();
    LayerGraph::assemble(nodes, edges, fusion_index, Vec::new())
}

impl TryFrom<GraphDoc> for LayerGraph {
    type Error = GraphError;
    fn try_from(doc: GraphDoc) -> Result<Self, GraphError> {
        LayerGraph::from_doc(doc)
    }
}

impl From<LayerGraph> for GraphDoc {
    fn from(g: LayerGraph) -> GraphDoc {
        g.to_doc()
    }
}

impl LayerGraph {
    pub fn from_doc(doc: GraphDoc) -> Result<Self, GraphError> {
        let ncs: BTreeSet<(NodeId, NodeId)> = doc.ncs_edges.iter().copied().collect();
        let edges = doc.edges.into_iter().map(|(src, dst)| Edge { src, dst, ncs: ncs.contains(&(src, dst)) }).collect();
        Self::assemble(doc.nodes, edges, doc.fusion_index, doc.connections)
    }

    pub fn to_doc(&self) -> GraphDoc {
        GraphDoc {
            nodes: self.nodes.iter().map(LayerNode::spec).collect(),
            edges: self.edges.iter().map(|e| (e.src, e.dst)).collect(),
            fusion_index: self.fusion_index,
            ncs_edges: self.edges.iter().filter(|e| e.ncs).map(|e| (e.src, e.dst)).collect(),
            connections: self.connections.clone(),
        }
    }

    fn assemble(mut specs: Vec<NodeSpec>, edges: Vec<Edge>, fusion_index: NodeId, connections: Vec<ConnectionSpec>) -> Result<Self, GraphError> {
        specs.sort_by_key(|n| n.id);
        for w in specs.windows(2) {
            if w[0].id == w[1].id {
                return Err(GraphError::DuplicateId(w[0].id));
            }
        }
        let ids: BTreeSet<NodeId> = specs.iter().map(|n| n.id).collect();
        let mut seen = BTreeSet::new();
        for e in &edges {
            for id in [e.src, e.dst] {
                if !ids.contains(&id) {
                    return Err(GraphError::UnknownId(id));
                }
            }
            if e.src == e.dst {
                return Err(GraphError::CycleDetected(e.src));
            }
            if !seen.insert((e.src, e.dst)) {
                return Err(GraphError::DuplicateEdge(e.src, e.dst));
            }
        }
        if !ids.contains(&fusion_index) {
            return Err(GraphError::UnknownId(fusion_index));
        }
        let inputs = specs.iter().filter(|n| n.kind == LayerKind::Input).count();
        if inputs != 1 {
            return Err(GraphError::InputCount(inputs));
        }
        let synthetic: BTreeSet<NodeId> = specs.iter().filter(|n| n.synthetic).map(|n| n.id).collect();
        let order = topo_order(&ids, &edges, &synthetic)?;

        let mut shapes: BTreeMap<NodeId, Shape> = BTreeMap::new();
        let by_id: BTreeMap<NodeId, &NodeSpec> = specs.iter().map(|n| (n.id, n)).collect();
        for id in &order {
            let spec = by_id[id];
            validate_attrs(spec)?;
            let in_shapes: Vec<Shape> = edges.iter().filter(|e| e.dst == *id).map(|e| shapes[&e.src]).collect();
            let out = infer_shape(spec, &in_shapes)?;
            shapes.insert(*id, out);
        }

        let nodes: Vec<LayerNode> =
            specs.into_iter().map(|s| LayerNode { id: s.id, kind: s.kind, out_shape: shapes[&s.id], attrs: s.attrs, synthetic: s.synthetic }).collect();
        let graph = LayerGraph { nodes, edges, fusion_index, connections, order };
        let input = graph.input_id();
        if !graph.reaches(input, fusion_index, |_| true) {
            return Err(GraphError::FusionUnreachable(fusion_index));
        }
        Ok(graph)
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn fusion_index(&self) -> NodeId {
        self.fusion_index
    }

    /// Searched connections applied to this graph, in insertion order.
    pub fn connections(&self) -> &[ConnectionSpec] {
        &self.connections
    }

    /// Topological order with ascending-id tie-break.
    pub fn topo_order(&self) -> &[NodeId] {
        &self.order
    }

    pub fn node(&self, id: NodeId) -> Option<&LayerNode> {
        self.nodes.binary_search_by_key(&id, |n| n.id).ok().map(|i| &self.nodes[i])
    }

    pub fn input_id(&self) -> NodeId {
        self.nodes.iter().find(|n| n.kind == LayerKind::Input).map(|n| n.id).expect("validated graph has an input")
    }

    pub fn output_id(&self) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.kind == LayerKind::Output).map(|n| n.id)
    }

    pub fn input_shape(&self) -> Shape {
        self.node(self.input_id()).map(|n| n.out_shape).expect("validated graph has an input")
    }

    /// Predecessors of `id` in input order.
    pub fn inputs_of(&self, id: NodeId) -> Vec<NodeId> {
        self.edges.iter().filter(|e| e.dst == id).map(|e| e.src).collect()
    }

    pub fn outputs_of(&self, id: NodeId) -> Vec<NodeId> {
        self.edges.iter().filter(|e| e.src == id).map(|e| e.dst).collect()
    }

    fn max_id(&self) -> NodeId {
        self.nodes.last().map(|n| n.id).unwrap_or(0)
    }

    fn position(&self) -> BTreeMap<NodeId, usize> {
        self.order.iter().enumerate().map(|(i, id)| (*id, i)).collect()
    }

    fn is_synthetic(&self, id: NodeId) -> bool {
        self.node(id).map(|n| n.synthetic).unwrap_or(false)
    }

    /// Depth-first reachability from `from` to `to`, only passing through
    /// intermediate nodes accepted by `through`.
    fn reaches(&self, from: NodeId, to: NodeId, through: impl Fn(NodeId) -> bool) -> bool {
        let mut stack = vec![from];
        let mut visited = BTreeSet::new();
        while let Some(n) = stack.pop() {
            for e in self.edges.iter().filter(|e| e.src == n) {
                if e.dst == to {
                    return true;
                }
                if through(e.dst) && visited.insert(e.dst) {
                    stack.push(e.dst);
                }
            }
        }
        false
    }

    /// Whether `src` already feeds `dst`, directly or through adapter and
    /// merge nodes created by earlier insertions.
    pub fn is_connected(&self, src: NodeId, dst: NodeId) -> bool {
        self.reaches(src, dst, |n| self.is_synthetic(n))
    }

    fn is_candidate(&self, src: NodeId, dst: NodeId, pos: &BTreeMap<NodeId, usize>) -> bool {
        let (Some(s), Some(d)) = (self.node(src), self.node(dst)) else {
            return false;
        };
        !s.synthetic && !d.synthetic && d.kind != LayerKind::Input && dst <= self.fusion_index && pos[&src] < pos[&dst] && !self.is_connected(src, dst)
    }

    fn with_nodes_and_edges(&self, extra: Vec<NodeSpec>, edges: Vec<Edge>, connections: Vec<ConnectionSpec>) -> Result<Self, GraphError> {
        let mut specs: Vec<NodeSpec> = self.nodes.iter().map(LayerNode::spec).collect();
        specs.extend(extra);
        Self::assemble(specs, edges, self.fusion_index, connections)
    }
}

/// Kahn's algorithm; among ready nodes the smallest key goes first.
fn kahn(ids: &BTreeSet<NodeId>, edges: &[Edge], key: impl Fn(NodeId) -> (NodeId, bool, NodeId)) -> Result<Vec<NodeId>, GraphError> {
    let mut indegree: BTreeMap<NodeId, usize> = ids.iter().map(|id| (*id, 0)).collect();
    for e in edges {
        *indegree.get_mut(&e.dst).expect("edge endpoints validated") += 1;
    }
    let mut ready: BTreeSet<_> = indegree.iter().filter(|(_, d)| **d == 0).map(|(id, _)| key(*id)).collect();
    let mut order = Vec::with_capacity(ids.len());
    while let Some((_, _, id)) = ready.pop_first() {
        order.push(id);
        for e in edges.iter().filter(|e| e.src == id) {
            let d = indegree.get_mut(&e.dst).expect("edge endpoints validated");
            *d -= 1;
            if *d == 0 {
                ready.insert(key(e.dst));
            }
        }
    }
    if order.len() != ids.len() {
        let stuck = indegree.iter().find(|(_, d)| **d > 0).map(|(id, _)| *id).unwrap_or(0);
        return Err(GraphError::CycleDetected(stuck));
    }
    Ok(order)
}

/// Topological order with ascending-id tie-break among declared nodes.
/// A synthetic node is anchored to the declared node it feeds and scheduled
/// just before it, so connection insertion never reorders declared nodes.
fn topo_order(ids: &BTreeSet<NodeId>, edges: &[Edge], synthetic: &BTreeSet<NodeId>) -> Result<Vec<NodeId>, GraphError> {
    let plain = kahn(ids, edges, |id| (id, false, id))?;
    if synthetic.is_empty() {
        return Ok(plain);
    }
    let mut anchor: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    for &id in plain.iter().rev() {
        let a = if synthetic.contains(&id) { edges.iter().filter(|e| e.src == id).map(|e| anchor[&e.dst]).min().unwrap_or(id) } else { id };
        anchor.insert(id, a);
    }
    kahn(ids, edges, |id| (anchor[&id], !synthetic.contains(&id), id))
}

/// Topological order of a graph (ascending-id tie-break).
pub fn topo_sort(graph: &LayerGraph) -> Vec<NodeId> {
    graph.order.clone()
}

fn validate_attrs(n: &NodeSpec) -> Result<(), GraphError> {
    let node = n.id;
    let a = &n.attrs;
    let positive = |v: Option<usize>, attr: &'static str| match v {
        None => Err(GraphError::MissingAttr { node, attr }),
        Some(0) => Err(GraphError::InvalidAttr { node, attr }),
        Some(_) => Ok(()),
    };
    let optional_positive = |v: Option<usize>, attr: &'static str| match v {
        Some(0) => Err(GraphError::InvalidAttr { node, attr }),
        _ => Ok(()),
    };
    match n.kind {
        LayerKind::Input | LayerKind::Reshape => {
            let s = a.shape.ok_or(GraphError::MissingAttr { node, attr: "shape" })?;
            if s.numel() == 0 {
                return Err(GraphError::InvalidAttr { node, attr: "shape" });
            }
        }
        LayerKind::Dense | LayerKind::GRU => positive(a.units, "units")?,
        LayerKind::Conv1D => {
            positive(a.units, "units")?;
            positive(a.kernel, "kernel")?;
            optional_positive(a.stride, "stride")?;
            optional_positive(a.dilation, "dilation")?;
        }
        LayerKind::Activation => {
            a.activation.ok_or(GraphError::MissingAttr { node, attr: "activation" })?;
        }
        LayerKind::Dropout => {
            let r = a.rate.ok_or(GraphError::MissingAttr { node, attr: "rate" })?;
            if !(0.0..1.0).contains(&r) {
                return Err(GraphError::InvalidAttr { node, attr: "rate" });
            }
        }
        LayerKind::Resample => positive(a.length, "length")?,
        LayerKind::FusionHead => {
            positive(a.heads, "heads")?;
            positive(a.model_dim, "model_dim")?;
            positive(a.classes, "classes")?;
            let (h1, h2) = a.hidden.ok_or(GraphError::MissingAttr { node, attr: "hidden" })?;
            if h1 == 0 || h2 == 0 {
                return Err(GraphError::InvalidAttr { node, attr: "hidden" });
            }
            let heads = a.heads.unwrap_or(1);
            if !a.model_dim.unwrap_or(0).is_multiple_of(heads) {
                return Err(GraphError::InvalidAttr { node, attr: "heads" });
            }
        }
        LayerKind::Add | LayerKind::Concat | LayerKind::GlobalAvgPool | LayerKind::AttentionPool | LayerKind::Output => {}
    }
    Ok(())
}

/// Output length of a 1-D convolution.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, dilation: usize, padding: Padding) -> Option<usize> {
    match padding {
        Padding::Same => Some(len.div_ceil(stride)),
        Padding::Valid => {
            let span = (kernel - 1) * dilation + 1;
            (len >= span).then(|| (len - span) / stride + 1)
        }
    }
}

fn infer_shape(n: &NodeSpec, inputs: &[Shape]) -> Result<Shape, GraphError> {
    let node = n.id;
    let fail = |reason: String| GraphError::ShapeInferenceFailure { node, reason };
    let arity = |expected: &'static str, ok: bool| {
        if ok {
            Ok(())
        } else {
            Err(GraphError::Arity { node, kind: n.kind, expected, found: inputs.len() })
        }
    };
    let a = &n.attrs;
    match n.kind {
        LayerKind::Input => {
            arity("0", inputs.is_empty())?;
            Ok(a.shape.expect("validated"))
        }
        LayerKind::Add => {
            arity("at least 1", !inputs.is_empty())?;
            if inputs.iter().any(|s| *s != inputs[0]) {
                return Err(fail(alloc::format!("Add inputs disagree: {inputs:?}")));
            }
            Ok(inputs[0])
        }
        LayerKind::Concat => {
            arity("at least 1", !inputs.is_empty())?;
            match inputs[0] {
                Shape::Seq { len, .. } => {
                    let mut ch = 0;
                    for s in inputs {
                        match s {
                            Shape::Seq { len: l, channels } if *l == len => ch += channels,
                            _ => return Err(fail(alloc::format!("Concat inputs disagree: {inputs:?}"))),
                        }
                    }
                    Ok(Shape::seq(len, ch))
                }
                Shape::Flat(_) => {
                    let mut d = 0;
                    for s in inputs {
                        match s {
                            Shape::Flat(x) => d += x,
                            _ => return Err(fail(alloc::format!("Concat inputs disagree: {inputs:?}"))),
                        }
                    }
                    Ok(Shape::Flat(d))
                }
            }
        }
        _ => {
            arity("1", inputs.len() == 1)?;
            let x = inputs[0];
            match n.kind {
                LayerKind::Dense => {
                    let units = a.units.expect("validated");
                    Ok(match x {
                        Shape::Seq { len, .. } => Shape::seq(len, units),
                        Shape::Flat(_) => Shape::Flat(units),
                    })
                }
                LayerKind::Conv1D => match x {
                    Shape::Seq { len, .. } => {
                        let k = a.kernel.expect("validated");
                        let out = conv_out_len(len, k, a.stride(), a.dilation(), a.padding())
                            .ok_or_else(|| fail(alloc::format!("input length {len} shorter than the dilated kernel")))?;
                        if out == 0 {
                            return Err(fail("empty convolution output".into()));
                        }
                        Ok(Shape::seq(out, a.units.expect("validated")))
                    }
                    Shape::Flat(_) => Err(fail("Conv1D needs a sequence input".into())),
                },
                LayerKind::GRU => match x {
                    Shape::Seq { .. } => Ok(Shape::Flat(a.units.expect("validated"))),
                    Shape::Flat(_) => Err(fail("GRU needs a sequence input".into())),
                },
                LayerKind::GlobalAvgPool | LayerKind::AttentionPool => match x {
                    Shape::Seq { channels, .. } => Ok(Shape::Flat(channels)),
                    Shape::Flat(_) => Err(fail(alloc::format!("{} needs a sequence input", n.kind))),
                },
                LayerKind::Activation | LayerKind::Dropout | LayerKind::Output => Ok(x),
                LayerKind::Reshape => {
                    let target = a.shape.expect("validated");
                    if target.numel() != x.numel() {
                        return Err(fail(alloc::format!("cannot reshape {x} into {target}")));
                    }
                    Ok(target)
                }
                LayerKind::Resample => match x {
                    Shape::Seq { channels, .. } => Ok(Shape::seq(a.length.expect("validated"), channels)),
                    Shape::Flat(_) => Err(fail("Resample needs a sequence input".into())),
                },
                LayerKind::FusionHead => match x {
                    Shape::Seq { .. } => Ok(Shape::Flat(a.classes.expect("validated"))),
                    Shape::Flat(_) => Err(fail("FusionHead needs a token sequence".into())),
                },
                LayerKind::Input | LayerKind::Add | LayerKind::Concat => unreachable!(),
            }
        }
    }
}

/// All absent forward connections `(i, j)` with `j` after `i` in topological
/// order and `j <= t`, ascending by `(i, j)`.
pub fn candidate_connections(graph: &LayerGraph) -> Vec<(NodeId, NodeId)> {
    let pos = graph.position();
    let mut out = Vec::new();
    for src in graph.nodes.iter().map(|n| n.id) {
        for dst in graph.nodes.iter().map(|n| n.id) {
            if src != dst && graph.is_candidate(src, dst, &pos) {
                out.push((src, dst));
            }
        }
    }
    out
}

struct Builder {
    next_id: NodeId,
    nodes: Vec<NodeSpec>,
    edges: Vec<Edge>,
}

impl Builder {
    fn push(&mut self, kind: LayerKind, attrs: Attrs) -> NodeId {
        let id = self.next_id;
        self.next_id += 1;
        self.nodes.push(NodeSpec { id, kind, attrs, synthetic: true });
        id
    }

    /// Append a node fed by `from`; returns the new node id.
    fn chain(&mut self, from: NodeId, kind: LayerKind, attrs: Attrs) -> NodeId {
        let id = self.push(kind, attrs);
        self.edges.push(Edge { src: from, dst: id, ncs: false });
        id
    }

    fn projection(&mut self, from: NodeId, shape: Shape, target_channels: usize) -> NodeId {
        if shape.is_seq() {
            let attrs = Attrs { padding: Some(Padding::Same), ..Attrs::conv(target_channels, 1, 1) };
            self.chain(from, LayerKind::Conv1D, attrs)
        } else {
            self.chain(from, LayerKind::Dense, Attrs::units(target_channels))
        }
    }

    /// Adapter chain converting `shape` exactly into `target`.
    fn adapt_exact(&mut self, from: NodeId, shape: Shape, target: Shape) -> NodeId {
        match (shape, target) {
            (Shape::Seq { len, channels }, Shape::Seq { len: tl, channels: tc }) => {
                let mut cur = from;
                if len != tl {
                    cur = self.chain(cur, LayerKind::Resample, Attrs { length: Some(tl), ..Attrs::default() });
                }
                if channels != tc {
                    cur = self.projection(cur, Shape::seq(tl, channels), tc);
                }
                cur
            }
            (Shape::Flat(d), Shape::Flat(td)) => {
                if d == td {
                    from
                } else {
                    self.chain(from, LayerKind::Dense, Attrs::units(td))
                }
            }
            (Shape::Flat(d), Shape::Seq { .. }) => {
                let mut cur = from;
                if d != target.numel() {
                    cur = self.chain(cur, LayerKind::Dense, Attrs::units(target.numel()));
                }
                self.chain(cur, LayerKind::Reshape, Attrs::shape(target))
            }
            (Shape::Seq { .. }, Shape::Flat(td)) => {
                let flat = Shape::Flat(shape.numel());
                let mut cur = self.chain(from, LayerKind::Reshape, Attrs::shape(flat));
                if shape.numel() != td {
                    cur = self.chain(cur, LayerKind::Dense, Attrs::units(td));
                }
                cur
            }
        }
    }

    /// Adapter chain making `shape` concatenable with `peer` (all dimensions
    /// but channels must agree). Returns the node id and its shape.
    fn adapt_concat(&mut self, from: NodeId, shape: Shape, peer: Shape) -> (NodeId, Shape) {
        match (shape, peer) {
            (Shape::Seq { len, channels }, Shape::Seq { len: pl, .. }) => {
                if len == pl {
                    (from, shape)
                } else {
                    let id = self.chain(from, LayerKind::Resample, Attrs { length: Some(pl), ..Attrs::default() });
                    (id, Shape::seq(pl, channels))
                }
            }
            (Shape::Flat(_), Shape::Flat(_)) => (from, shape),
            (Shape::Flat(d), Shape::Seq { len: pl, .. }) => {
                if d % pl == 0 {
                    let t = Shape::seq(pl, d / pl);
                    (self.chain(from, LayerKind::Reshape, Attrs::shape(t)), t)
                } else {
                    let dense = self.chain(from, LayerKind::Dense, Attrs::units(pl));
                    let t = Shape::seq(pl, 1);
                    (self.chain(dense, LayerKind::Reshape, Attrs::shape(t)), t)
                }
            }
            (Shape::Seq { .. }, Shape::Flat(_)) => {
                let t = Shape::Flat(shape.numel());
                (self.chain(from, LayerKind::Reshape, Attrs::shape(t)), t)
            }
        }
    }
}

/// Insert a searched connection, returning the expanded graph.
///
/// Residual connections are summed into the destination's input through an
/// `Add` node, concatenations joined through a `Concat` node. Adapter nodes
/// (resampling, width-1 convolution or dense projection, reshape) are created
/// with fresh ids above the current maximum and flagged `synthetic`.
pub fn insert_connection(graph: &LayerGraph, spec: ConnectionSpec) -> Result<LayerGraph, GraphError> {
    let ConnectionSpec { src, dst, ctype } = spec;
    if !graph.is_candidate(src, dst, &graph.position()) {
        return Err(GraphError::NotACandidate { src, dst });
    }
    let failure = |reason: &str| GraphError::AdapterSynthesisFailure { src, dst, reason: reason.into() };
    let dst_node = graph.node(dst).expect("candidate endpoints exist");
    let src_shape = graph.node(src).expect("candidate endpoints exist").out_shape;
    let in_edge = graph.edges.iter().position(|e| e.dst == dst).ok_or_else(|| failure("destination has no input"))?;
    let feeder = graph.edges[in_edge].src;
    let feeder_shape = graph.node(feeder).expect("edge endpoints exist").out_shape;

    let mut b = Builder { next_id: graph.max_id() + 1, nodes: Vec::new(), edges: graph.edges.clone() };
    let first_new_edge = b.edges.len();

    match ctype {
        ConnectionType::Residual => {
            // Join an existing Add when the destination is one, or is fed by
            // an Add that an earlier insertion created.
            let merge = if dst_node.kind == LayerKind::Add {
                Some((dst, dst_node.out_shape))
            } else {
                graph.node(feeder).filter(|n| n.synthetic && n.kind == LayerKind::Add).map(|n| (n.id, n.out_shape))
            };
            let (merge_id, target) = match merge {
                Some(m) => m,
                None => {
                    let m = b.push(LayerKind::Add, Attrs::default());
                    b.edges[in_edge] = Edge { src: m, dst, ncs: false };
                    b.edges.push(Edge { src: feeder, dst: m, ncs: false });
                    (m, feeder_shape)
                }
            };
            if target.numel() == 0 {
                return Err(failure("zero-sized target"));
            }
            let adapted = b.adapt_exact(src, src_shape, target);
            b.edges.push(Edge { src: adapted, dst: merge_id, ncs: false });
        }
        ConnectionType::Concatenate => {
            let m = b.push(LayerKind::Concat, Attrs::default());
            let (adapted, adapted_shape) = b.adapt_concat(src, src_shape, feeder_shape);
            b.edges.push(Edge { src: feeder, dst: m, ncs: false });
            b.edges.push(Edge { src: adapted, dst: m, ncs: false });
            let joined = match feeder_shape {
                Shape::Seq { len, channels } => Shape::seq(len, channels + adapted_shape.channels()),
                Shape::Flat(d) => Shape::Flat(d + adapted_shape.channels()),
            };
            let into_dst = if dst_node.kind.absorbs_channels() { m } else { b.projection(m, joined, feeder_shape.channels()) };
            b.edges[in_edge] = Edge { src: into_dst, dst, ncs: false };
        }
    }

    // Mark the first physical edge leaving the source on the new path.
    if let Some(e) = b.edges[first_new_edge..].iter_mut().find(|e| e.src == src) {
        e.ncs = true;
    }
    let mut connections = graph.connections.clone();
    connections.push(spec);
    graph.with_nodes_and_edges(b.nodes, b.edges, connections).map_err(|e| GraphError::AdapterSynthesisFailure { src, dst, reason: alloc::format!("{e}") })
}

/// Check the structural invariants that connection insertion must preserve:
/// every edge points forward, Add inputs agree exactly, and Concat inputs
/// agree on everything but channels.
pub fn check_invariants(graph: &LayerGraph) -> Result<(), String> {
    let pos = graph.position();
    for e in &graph.edges {
        if pos[&e.src] >= pos[&e.dst] {
            return Err(alloc::format!("edge {} -> {} points backwards", e.src, e.dst));
        }
    }
    for n in &graph.nodes {
        if !n.kind.is_merge() {
            continue;
        }
        let shapes: Vec<Shape> = graph.inputs_of(n.id).iter().map(|i| graph.node(*i).expect("edge endpoint").out_shape).collect();
        let ok = match n.kind {
            LayerKind::Add => shapes.iter().all(|s| *s == shapes[0]),
            _ => shapes.iter().all(|s| match (s, shapes[0]) {
                (Shape::Seq { len, .. }, Shape::Seq { len: l0, .. }) => *len == l0,
                (Shape::Flat(_), Shape::Flat(_)) => true,
                _ => false,
            }),
        };
        if !ok {
            return Err(alloc::format!("{} node {} has inconsistent inputs {shapes:?}", n.kind, n.id));
        }
    }
    Ok(())
}
