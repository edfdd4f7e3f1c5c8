//! Assignment graphs: typed directed graphs built from expanded nets.
//!
//! Every non-empty place becomes a node whose type is determined by its
//! attribute names and whose attributes are the token's time relative to the
//! clock followed by the token's values. Transitions become attribute-less
//! `A_Transition` / `E_Transition` nodes, and arcs between mapped elements
//! become edges.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expansion::ExpansionMap;
use crate::net::{Binding, MarkedAEPN, Tag};

pub const A_TRANSITION: &str = "A_Transition";
pub const E_TRANSITION: &str = "E_Transition";
/// First attribute of every place node.
pub const TIME: &str = "TIME";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("place `{place}` holds {tokens} tokens; map an expanded net")]
    NotExpanded { place: String, tokens: usize },
    #[error("malformed graph document: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: usize,
    #[serde(rename = "type")]
    pub ty: String,
    pub attrs: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AssignmentGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<(usize, usize)>,
    /// Place node type → attribute names, `TIME` first.
    #[serde(default)]
    pub type_registry: BTreeMap<String, Vec<String>>,
}

/// Node type of a place with the given attribute names.
pub fn place_type_name(attrs: &[String]) -> String {
    format!("P{{{}}}", attrs.join(","))
}

pub fn is_transition_type(ty: &str) -> bool {
    ty == A_TRANSITION || ty == E_TRANSITION
}

/// Source binding behind an action node.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionOrigin {
    pub source_transition: String,
    /// Binding in the source net; absent when the expansion map was loaded
    /// from a document rather than produced in this process.
    pub binding: Option<Binding>,
}

/// Which expanded-net element each node came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodeProvenance {
    /// Expanded-net element id, indexed by node id.
    pub elements: Vec<String>,
    /// Indexed by node id; `Some` exactly for action nodes.
    pub actions: Vec<Option<ActionOrigin>>,
}

impl NodeProvenance {
    pub fn node_of(&self, element: &str) -> Option<usize> {
        self.elements.iter().position(|e| e == element)
    }

    pub fn action(&self, node: usize) -> Option<&ActionOrigin> {
        self.actions.get(node).and_then(Option::as_ref)
    }
}

impl AssignmentGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Ids of `A_Transition` nodes, ascending.
    pub fn action_nodes(&self) -> Vec<usize> {
        self.nodes.iter().filter(|n| n.ty == A_TRANSITION).map(|n| n.id).collect()
    }

    /// Sources of edges into `node`.
    pub fn predecessors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.1 == node).map(|e| e.0)
    }

    /// Value of a named attribute of a place node.
    pub fn attr(&self, node: usize, name: &str) -> Option<f64> {
        let n = &self.nodes[node];
        let idx = self.type_registry.get(&n.ty)?.iter().position(|a| a == name)?;
        n.attrs.get(idx).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graphs always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        serde_json::from_str(text).map_err(|e| GraphError::Malformed(e.to_string()))
    }

    /// Graphviz rendering; node type decides shape and fill.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph assignment {\n  rankdir=LR;\n");
        for n in &self.nodes {
            let (shape, fill) = match n.ty.as_str() {
                A_TRANSITION => ("box", "lightblue"),
                E_TRANSITION => ("box", "lightgray"),
                _ => ("ellipse", "lightyellow"),
            };
            let label = if n.attrs.is_empty() {
                format!("{}: {}", n.id, n.ty)
            } else {
                let attrs: Vec<String> = n.attrs.iter().map(|v| format!("{v}")).collect();
                format!("{}: {}\\n[{}]", n.id, n.ty, attrs.join(", "))
            };
            let _ = writeln!(
                out,
                "  n{} [label=\"{}\", shape={shape}, style=filled, fillcolor={fill}];",
                n.id,
                label.replace('"', "\\\"")
            );
        }
        for (s, d) in &self.edges {
            let _ = writeln!(out, "  n{s} -> n{d};");
        }
        out.push_str("}\n");
        out
    }
}

/// Maps an expanded net to its assignment graph.
///
/// `emap` (from [`crate::expansion::expand`]) links action nodes back to
/// source bindings; without it action provenance is left empty.
pub fn map_to_graph(
    expanded: &MarkedAEPN,
    emap: Option<&ExpansionMap>,
) -> Result<(AssignmentGraph, NodeProvenance), GraphError> {
    let clock = expanded.clock();
    let mut graph = AssignmentGraph::default();
    let mut prov = NodeProvenance::default();

    let mut places: Vec<(String, usize)> = Vec::new();
    for (i, p) in expanded.places().iter().enumerate() {
        match p.marking.len() {
            0 => {}
            1 => {
                let ty = place_type_name(p.schema.names());
                graph.type_registry.entry(ty.clone()).or_insert_with(|| {
                    std::iter::once(TIME.to_string()).chain(p.schema.names().iter().cloned()).collect()
                });
                places.push((ty, i));
            }
            n => {
                return Err(GraphError::NotExpanded {
                    place: p.id.clone(),
                    tokens: n,
                })
            }
        }
    }
    places.sort();

    let mut node_of: HashMap<&str, usize> = HashMap::new();
    for (ty, i) in places {
        let p = expanded.place(i);
        let tok = &p.marking[0];
        let id = graph.nodes.len();
        let mut attrs = Vec::with_capacity(tok.values.len() + 1);
        attrs.push(tok.time - clock);
        attrs.extend_from_slice(&tok.values);
        graph.nodes.push(GraphNode { id, ty, attrs });
        node_of.insert(&p.id, id);
        prov.elements.push(p.id.clone());
        prov.actions.push(None);
    }
    for tag in [Tag::Action, Tag::Evolution] {
        for t in expanded.transitions().iter().filter(|t| t.tag == tag) {
            let id = graph.nodes.len();
            let ty = match tag {
                Tag::Action => A_TRANSITION,
                Tag::Evolution => E_TRANSITION,
            };
            graph.nodes.push(GraphNode {
                id,
                ty: ty.to_string(),
                attrs: Vec::new(),
            });
            node_of.insert(&t.id, id);
            prov.elements.push(t.id.clone());
            prov.actions.push((tag == Tag::Action).then(|| {
                let origin = emap.and_then(|m| m.origin(&t.id));
                ActionOrigin {
                    source_transition: origin.map_or_else(|| t.id.clone(), |o| o.source.clone()),
                    binding: origin.and_then(|o| o.source_binding().cloned()),
                }
            }));
        }
    }
    for a in &expanded.structure().arcs {
        if let (Some(&s), Some(&d)) = (node_of.get(a.source.as_str()), node_of.get(a.target.as_str())) {
            graph.edges.push((s, d));
        }
    }
    Ok((graph, prov))
}

/// A broken assignment-graph property.
#[derive(Clone, Debug, PartialEq)]
pub enum GraphViolation {
    /// An edge between two transition nodes.
    TransitionEdge { from: usize, to: usize },
    /// A transition node with attributes.
    TransitionAttrs { node: usize },
    /// A place node whose type is not registered.
    UnknownType { node: usize, ty: String },
    AttrLength { node: usize, expected: usize, got: usize },
    /// Node ids must equal positions.
    NodeId { position: usize, id: usize },
    DanglingEdge { from: usize, to: usize },
}

impl std::fmt::Display for GraphViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GraphViolation::TransitionEdge { from, to } => write!(f, "edge {from} -> {to} joins two transition nodes"),
            GraphViolation::TransitionAttrs { node } => write!(f, "transition node {node} carries attributes"),
            GraphViolation::UnknownType { node, ty } => write!(f, "node {node} has unregistered type `{ty}`"),
            GraphViolation::AttrLength { node, expected, got } => {
                write!(f, "node {node} has {got} attributes, its type declares {expected}")
            }
            GraphViolation::NodeId { position, id } => write!(f, "node at position {position} has id {id}"),
            GraphViolation::DanglingEdge { from, to } => write!(f, "edge {from} -> {to} references a missing node"),
        }
    }
}

pub fn validate_graph(g: &AssignmentGraph) -> Vec<GraphViolation> {
    let mut out = Vec::new();
    for (i, n) in g.nodes.iter().enumerate() {
        if n.id != i {
            out.push(GraphViolation::NodeId { position: i, id: n.id });
        }
        if is_transition_type(&n.ty) {
            if !n.attrs.is_empty() {
                out.push(GraphViolation::TransitionAttrs { node: n.id });
            }
            continue;
        }
        match g.type_registry.get(&n.ty) {
            None => out.push(GraphViolation::UnknownType {
                node: n.id,
                ty: n.ty.clone(),
            }),
            Some(names) if names.len() != n.attrs.len() => out.push(GraphViolation::AttrLength {
                node: n.id,
                expected: names.len(),
                got: n.attrs.len(),
            }),
            Some(_) => {}
        }
    }
    for &(s, d) in &g.edges {
        match (g.nodes.get(s), g.nodes.get(d)) {
            (Some(a), Some(b)) => {
                if is_transition_type(&a.ty) && is_transition_type(&b.ty) {
                    out.push(GraphViolation::TransitionEdge { from: s, to: d });
                }
            }
            _ => out.push(GraphViolation::DanglingEdge { from: s, to: d }),
        }
    }
    out
}
