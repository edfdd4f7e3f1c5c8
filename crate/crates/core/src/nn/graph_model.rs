//! Heterogeneous graph attention actor-critic over assignment graphs.
//!
//! Each node type has its own input projection. A round of message passing
//! runs attention separately per edge type (source type, target type), then
//! mixes the per-edge-type results of every node with a second, semantic
//! attention, and adds the result to the node state. Policy and value use
//! separate encoders.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::{Tape, Tensor, Var};
use super::{ActorCritic, ForwardOut, Mlp, NnError, LOG_PROB_FLOOR};
use crate::env::Observation;
use crate::graph::{place_type_name, AssignmentGraph, A_TRANSITION, E_TRANSITION, TIME};
use crate::net::{MarkedAEPN, Tag};

/// Node types (with attribute names) and edge types a model knows about.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSchema {
    pub node_types: Vec<(String, Vec<String>)>,
    /// `(source type, target type)` as indices into `node_types`.
    pub edge_types: Vec<(usize, usize)>,
}

impl GraphSchema {
    /// Every node and edge type an expansion of `net` can produce.
    pub fn from_net(net: &MarkedAEPN) -> Self {
        let mut node_types: Vec<(String, Vec<String>)> = Vec::new();
        let mut type_of_place = Vec::new();
        let intern = |name: String, attrs: Vec<String>, types: &mut Vec<(String, Vec<String>)>| {
            types.iter().position(|(n, _)| *n == name).unwrap_or_else(|| {
                types.push((name, attrs));
                types.len() - 1
            })
        };
        for p in net.places() {
            let attrs = std::iter::once(TIME.to_string()).chain(p.schema.names().iter().cloned()).collect();
            type_of_place.push(intern(place_type_name(p.schema.names()), attrs, &mut node_types));
        }
        let a = intern(A_TRANSITION.into(), Vec::new(), &mut node_types);
        let e = intern(E_TRANSITION.into(), Vec::new(), &mut node_types);
        let mut edges = BTreeSet::new();
        for (ti, t) in net.transitions().iter().enumerate() {
            let tt = if t.tag == Tag::Action { a } else { e };
            for &p in &t.inputs {
                edges.insert((type_of_place[p], tt));
            }
            for p in net.transition(ti).outputs() {
                edges.insert((tt, type_of_place[p]));
            }
        }
        GraphSchema {
            node_types,
            edge_types: edges.into_iter().collect(),
        }
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|(n, _)| n == name)
    }
}

/// Rescales attributes by name before they reach the network.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    /// Values are divided by these.
    pub scale: BTreeMap<String, f64>,
    /// Absolute times made relative to the observation clock first.
    pub clock_relative: BTreeSet<String>,
}

impl FeatureNormalizer {
    /// Budgets in hundreds, acceptance windows relative to now.
    pub fn for_tasks() -> Self {
        FeatureNormalizer {
            scale: BTreeMap::from([("budget".to_string(), 100.0)]),
            clock_relative: BTreeSet::from(["window_end".to_string()]),
        }
    }

    pub fn apply(&self, name: &str, v: f64, clock: f64) -> f64 {
        let v = if self.clock_relative.contains(name) { v - clock } else { v };
        v / self.scale.get(name).copied().unwrap_or(1.0)
    }
}

/// One graph prepared for the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedGraph {
    pub node_type: Vec<usize>,
    pub features: Vec<Vec<f64>>,
    /// `(source, target, edge type)`.
    pub edges: Vec<(usize, usize, usize)>,
    /// Action node ids, ascending.
    pub actions: Vec<usize>,
}

impl EncodedGraph {
    pub fn new(
        g: &AssignmentGraph,
        clock: f64,
        schema: &GraphSchema,
        norm: &FeatureNormalizer,
    ) -> Result<Self, NnError> {
        let mut node_type = Vec::with_capacity(g.nodes.len());
        let mut features = Vec::with_capacity(g.nodes.len());
        for n in &g.nodes {
            let t = schema.type_index(&n.ty).ok_or_else(|| NnError::UnknownNodeType(n.ty.clone()))?;
            let names = &schema.node_types[t].1;
            if names.len() != n.attrs.len() {
                return Err(NnError::AttributeCount {
                    ty: n.ty.clone(),
                    expected: names.len(),
                    got: n.attrs.len(),
                });
            }
            node_type.push(t);
            features.push(names.iter().zip(&n.attrs).map(|(a, &v)| norm.apply(a, v, clock)).collect());
        }
        let edge_index: HashMap<(usize, usize), usize> =
            schema.edge_types.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let mut edges = Vec::with_capacity(g.edges.len());
        for &(s, d) in &g.edges {
            if let Some(&et) = edge_index.get(&(node_type[s], node_type[d])) {
                edges.push((s, d, et));
            }
        }
        let actions = g.action_nodes();
        Ok(EncodedGraph {
            node_type,
            features,
            edges,
            actions,
        })
    }

    pub fn len(&self) -> usize {
        self.node_type.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_type.is_empty()
    }
}

struct EdgeBatch {
    src_type: usize,
    dst_type: usize,
    /// Positions within the source / target type's node lists.
    src_local: Rc<Vec<usize>>,
    dst_local: Rc<Vec<usize>>,
    /// Global target node per edge.
    dst: Rc<Vec<usize>>,
    /// Distinct target nodes (global), ascending.
    targets: Rc<Vec<usize>>,
}

/// Block-diagonal union of several graphs.
pub struct GraphBatch {
    pub nodes: usize,
    pub graphs: usize,
    /// Graph index of every node.
    node_graph: Rc<Vec<usize>>,
    graph_sizes: Vec<usize>,
    inv_graph_size: Tensor,
    /// Global node ids per type, and the type's feature matrix.
    type_nodes: Vec<Rc<Vec<usize>>>,
    type_features: Vec<Tensor>,
    edges: Vec<EdgeBatch>,
    /// Global action nodes and the graph of each.
    pub actions: Rc<Vec<usize>>,
    pub action_graph: Rc<Vec<usize>>,
}

impl GraphBatch {
    pub fn new(schema: &GraphSchema, graphs: &[&EncodedGraph]) -> Self {
        let types = schema.node_types.len();
        let mut type_nodes = vec![Vec::new(); types];
        let mut type_rows: Vec<Vec<f64>> = vec![Vec::new(); types];
        let mut local = Vec::new();
        let mut node_graph = Vec::new();
        let mut sizes = Vec::with_capacity(graphs.len());
        let mut actions = Vec::new();
        let mut action_graph = Vec::new();
        let mut edge_lists: Vec<Vec<(usize, usize)>> = vec![Vec::new(); schema.edge_types.len()];
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            for (n, (&t, f)) in g.node_type.iter().zip(&g.features).enumerate() {
                local.push(type_nodes[t].len());
                type_nodes[t].push(offset + n);
                type_rows[t].extend_from_slice(f);
                node_graph.push(gi);
            }
            for &(s, d, et) in &g.edges {
                edge_lists[et].push((offset + s, offset + d));
            }
            for &a in &g.actions {
                actions.push(offset + a);
                action_graph.push(gi);
            }
            sizes.push(g.len());
            offset += g.len();
        }
        let type_features = type_rows
            .into_iter()
            .enumerate()
            .map(|(t, rows)| Tensor::from_vec(type_nodes[t].len(), schema.node_types[t].1.len(), rows))
            .collect();
        let edges = schema
            .edge_types
            .iter()
            .zip(edge_lists)
            .map(|(&(st, dt), list)| {
                let targets: BTreeSet<usize> = list.iter().map(|e| e.1).collect();
                EdgeBatch {
                    src_type: st,
                    dst_type: dt,
                    src_local: Rc::new(list.iter().map(|e| local[e.0]).collect()),
                    dst_local: Rc::new(list.iter().map(|e| local[e.1]).collect()),
                    dst: Rc::new(list.iter().map(|e| e.1).collect()),
                    targets: Rc::new(targets.into_iter().collect()),
                }
            })
            .collect();
        GraphBatch {
            nodes: offset,
            graphs: graphs.len(),
            node_graph: Rc::new(node_graph),
            inv_graph_size: Tensor::column(sizes.iter().map(|&s| 1.0 / s.max(1) as f64).collect()),
            graph_sizes: sizes,
            type_nodes: type_nodes.into_iter().map(Rc::new).collect(),
            type_features,
            edges,
            actions: Rc::new(actions),
            action_graph: Rc::new(action_graph),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphModelConfig {
    pub hidden: usize,
    pub rounds: usize,
    pub seed: u64,
    #[serde(default)]
    pub normalizer: FeatureNormalizer,
}

impl Default for GraphModelConfig {
    fn default() -> Self {
        GraphModelConfig {
            hidden: 64,
            rounds: 2,
            seed: 0,
            normalizer: FeatureNormalizer::for_tasks(),
        }
    }
}

#[derive(Clone, Debug)]
struct EdgeParams {
    w: usize,
    a_src: usize,
    a_dst: usize,
}

#[derive(Clone, Debug)]
struct RoundParams {
    edges: Vec<EdgeParams>,
    sem_w: usize,
    sem_b: usize,
    sem_q: usize,
}

/// Heterogeneous graph attention encoder.
#[derive(Clone, Debug)]
struct HeteroEncoder {
    proj: Vec<(usize, usize)>,
    rounds: Vec<RoundParams>,
}

const ATTENTION_SLOPE: f64 = 0.2;

impl HeteroEncoder {
    fn new(params: &mut ParamSet, prefix: &str, schema: &GraphSchema, d: usize, rounds: usize, rng: &mut ChaCha8Rng) -> Self {
        let proj = schema
            .node_types
            .iter()
            .map(|(name, attrs)| {
                let w = params.glorot(&format!("{prefix}.proj.{name}.w"), attrs.len(), d, rng);
                // A type without attributes is represented by its bias alone.
                let b = if attrs.is_empty() {
                    params.glorot(&format!("{prefix}.proj.{name}.b"), 1, d, rng)
                } else {
                    params.zeros(&format!("{prefix}.proj.{name}.b"), 1, d)
                };
                (w, b)
            })
            .collect();
        let rounds = (0..rounds)
            .map(|r| {
                let edges = schema
                    .edge_types
                    .iter()
                    .map(|&(s, t)| {
                        let tag = format!("{prefix}.r{r}.{}->{}", schema.node_types[s].0, schema.node_types[t].0);
                        EdgeParams {
                            w: params.glorot(&format!("{tag}.w"), d, d, rng),
                            a_src: params.glorot(&format!("{tag}.a_src"), d, 1, rng),
                            a_dst: params.glorot(&format!("{tag}.a_dst"), d, 1, rng),
                        }
                    })
                    .collect();
                RoundParams {
                    edges,
                    sem_w: params.glorot(&format!("{prefix}.r{r}.sem.w"), d, d, rng),
                    sem_b: params.zeros(&format!("{prefix}.r{r}.sem.b"), 1, d),
                    sem_q: params.glorot(&format!("{prefix}.r{r}.sem.q"), d, 1, rng),
                }
            })
            .collect();
        HeteroEncoder { proj, rounds }
    }

    /// Node embeddings `[nodes, d]` for a batch.
    fn forward(&self, tape: &mut Tape, vars: &[Var], batch: &GraphBatch) -> Var {
        let n = batch.nodes;
        let mut h: Option<Var> = None;
        for (t, &(w, b)) in self.proj.iter().enumerate() {
            if batch.type_nodes[t].is_empty() {
                continue;
            }
            let x = tape.leaf(batch.type_features[t].clone());
            let p = tape.matmul(x, vars[w]);
            let p = tape.add_row(p, vars[b]);
            let s = tape.scatter_add_rows(p, batch.type_nodes[t].clone(), n);
            h = Some(match h {
                Some(acc) => tape.add(acc, s),
                None => s,
            });
        }
        let mut h = h.expect("non-empty batch");

        for round in &self.rounds {
            // Gathered rows of h per type, shared by every edge type.
            let mut by_type: HashMap<usize, Var> = HashMap::new();
            let mut stacked: Vec<(Var, Rc<Vec<usize>>)> = Vec::new();
            for (eb, ep) in batch.edges.iter().zip(&round.edges) {
                if eb.dst.is_empty() {
                    continue;
                }
                let mut rows = |ty: usize, tape: &mut Tape| {
                    *by_type
                        .entry(ty)
                        .or_insert_with(|| tape.gather_rows(h, batch.type_nodes[ty].clone()))
                };
                let hs = rows(eb.src_type, tape);
                let hd = rows(eb.dst_type, tape);
                let ms = tape.matmul(hs, vars[ep.w]);
                let md = tape.matmul(hd, vars[ep.w]);
                let ss = tape.matmul(ms, vars[ep.a_src]);
                let sd = tape.matmul(md, vars[ep.a_dst]);
                let ss = tape.gather_rows(ss, eb.src_local.clone());
                let sd = tape.gather_rows(sd, eb.dst_local.clone());
                let score = tape.add(ss, sd);
                let score = tape.leaky_relu(score, ATTENTION_SLOPE);
                let alpha = tape.segment_softmax(score, eb.dst.clone());
                let msg = tape.gather_rows(ms, eb.src_local.clone());
                let msg = tape.mul_col(msg, alpha);
                let z = tape.scatter_add_rows(msg, eb.dst.clone(), n);
                let z = tape.gather_rows(z, eb.targets.clone());
                stacked.push((z, eb.targets.clone()));
            }
            if stacked.is_empty() {
                continue;
            }
            // Semantic attention over the edge types reaching each node.
            let total: usize = stacked.iter().map(|(_, t)| t.len()).sum();
            let mut owner = Vec::with_capacity(total);
            let mut s: Option<Var> = None;
            for (z, targets) in &stacked {
                let pos: Vec<usize> = (owner.len()..owner.len() + targets.len()).collect();
                owner.extend_from_slice(targets);
                let placed = tape.scatter_add_rows(*z, Rc::new(pos), total);
                s = Some(match s {
                    Some(acc) => tape.add(acc, placed),
                    None => placed,
                });
            }
            let s = s.expect("at least one edge type");
            let owner = Rc::new(owner);
            let k = tape.matmul(s, vars[round.sem_w]);
            let k = tape.add_row(k, vars[round.sem_b]);
            let k = tape.tanh(k);
            let w = tape.matmul(k, vars[round.sem_q]);
            let beta = tape.segment_softmax(w, owner.clone());
            let mixed = tape.mul_col(s, beta);
            let agg = tape.scatter_add_rows(mixed, owner, n);
            let agg = tape.relu(agg);
            h = tape.add(h, agg);
        }
        h
    }
}

/// Graph attention policy and value networks.
#[derive(Clone, Debug)]
pub struct GraphActorCritic {
    pub schema: GraphSchema,
    pub config: GraphModelConfig,
    params: ParamSet,
    pi_encoder: HeteroEncoder,
    vf_encoder: HeteroEncoder,
    pi_head: Mlp,
    vf_head: Mlp,
}

impl GraphActorCritic {
    pub fn new(schema: GraphSchema, config: GraphModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let d = config.hidden;
        let pi_encoder = HeteroEncoder::new(&mut params, "pi", &schema, d, config.rounds, &mut rng);
        let pi_head = Mlp::new(&mut params, "pi.head", d, d, 1, &mut rng);
        let vf_encoder = HeteroEncoder::new(&mut params, "vf", &schema, d, config.rounds, &mut rng);
        let vf_head = Mlp::new(&mut params, "vf.head", d, d, 1, &mut rng);
        GraphActorCritic {
            schema,
            config,
            params,
            pi_encoder,
            vf_encoder,
            pi_head,
            vf_head,
        }
    }

    pub fn for_net(net: &MarkedAEPN, config: GraphModelConfig) -> Self {
        GraphActorCritic::new(GraphSchema::from_net(net), config)
    }

    pub fn encode_graph(&self, g: &AssignmentGraph, clock: f64) -> Result<EncodedGraph, NnError> {
        EncodedGraph::new(g, clock, &self.schema, &self.config.normalizer)
    }

    /// Policy-encoder node embeddings.
    pub fn embeddings(&self, tape: &mut Tape, vars: &[Var], batch: &GraphBatch) -> Var {
        self.pi_encoder.forward(tape, vars, batch)
    }

    /// Log-probabilities over action nodes `[A, 1]`, normalized per graph.
    pub fn policy_forward(&self, tape: &mut Tape, vars: &[Var], batch: &GraphBatch) -> Result<Var, NnError> {
        let counts = batch.action_graph.iter().fold(vec![0usize; batch.graphs], |mut c, &g| {
            c[g] += 1;
            c
        });
        if batch.graphs == 0 || counts.contains(&0) {
            return Err(NnError::NoActions);
        }
        let h = self.pi_encoder.forward(tape, vars, batch);
        let a = tape.gather_rows(h, batch.actions.clone());
        let logits = self.pi_head.forward(tape, vars, a);
        let lp = tape.segment_log_softmax(logits, batch.action_graph.clone());
        Ok(tape.clamp(lp, LOG_PROB_FLOOR, 0.0))
    }

    /// One value per graph `[G, 1]` from the mean node embedding.
    pub fn value_forward(&self, tape: &mut Tape, vars: &[Var], batch: &GraphBatch) -> Result<Var, NnError> {
        if batch.graphs == 0 || batch.graph_sizes.contains(&0) {
            return Err(NnError::Empty);
        }
        let h = self.vf_encoder.forward(tape, vars, batch);
        let sums = tape.scatter_add_rows(h, batch.node_graph.clone(), batch.graphs);
        let inv = tape.leaf(batch.inv_graph_size.clone());
        let mean = tape.mul_col(sums, inv);
        Ok(self.vf_head.forward(tape, vars, mean))
    }

    pub fn batch(&self, graphs: &[&EncodedGraph]) -> GraphBatch {
        GraphBatch::new(&self.schema, graphs)
    }
}

impl ActorCritic for GraphActorCritic {
    type Input = EncodedGraph;

    fn encode(&self, obs: &Observation) -> Result<(EncodedGraph, Vec<usize>), NnError> {
        let g = self.encode_graph(&obs.graph, obs.clock)?;
        if g.actions.is_empty() {
            return Err(NnError::NoActions);
        }
        let candidates = g.actions.clone();
        Ok((g, candidates))
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(&self, tape: &mut Tape, vars: &[Var], batch: &[&EncodedGraph]) -> Result<ForwardOut, NnError> {
        if batch.is_empty() || batch.iter().any(|g| g.is_empty()) {
            return Err(NnError::Empty);
        }
        let b = self.batch(batch);
        let log_probs = self.policy_forward(tape, vars, &b)?;
        let values = self.value_forward(tape, vars, &b)?;
        Ok(ForwardOut {
            log_probs,
            segments: b.action_graph.clone(),
            values,
        })
    }
}
