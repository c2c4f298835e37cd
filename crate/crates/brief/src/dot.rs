//! Graphviz export.

use std::fmt::Write;

use brief_core::graph::{LayerGraph, Shape};

fn shape_label(s: Shape) -> String {
    match s {
        Shape::Seq { len, channels } => format!("{len}x{channels}"),
        Shape::Flat(d) => format!("{d}"),
    }
}

/// Nodes are named `"id:kind"`; the first edge of every searched connection
/// is drawn dashed and red, adapter nodes are dotted.
pub fn to_dot(graph: &LayerGraph) -> String {
    let mut out = String::from("digraph layers {\n  rankdir=TB;\n  node [shape=box];\n");
    for &id in graph.topo_order() {
        let n = graph.node(id).expect("ordered node exists");
        let mut attrs = format!("label=\"{}:{}\\n{}\"", n.id, n.kind, shape_label(n.out_shape));
        if n.synthetic {
            attrs.push_str(", style=dotted");
        }
        if n.id == graph.fusion_index() {
            attrs.push_str(", peripheries=2");
        }
        writeln!(out, "  \"{}:{}\" [{attrs}];", n.id, n.kind).expect("writing to a String");
    }
    for e in graph.edges() {
        let name = |id| {
            let n = graph.node(id).expect("edge endpoint exists");
            format!("\"{}:{}\"", n.id, n.kind)
        };
        let style = if e.ncs { " [style=dashed, color=red, class=\"ncs\"]" } else { "" };
        writeln!(out, "  {} -> {}{style};", name(e.src), name(e.dst)).expect("writing to a String");
    }
    out.push_str("}\n");
    out
}
