//! Episodic decision environment over a marked net.
//!
//! The agent is consulted only when at least one action binding is enabled;
//! it acts by picking an action node of the current assignment graph.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expansion::expand;
use crate::graph::{map_to_graph, AssignmentGraph, GraphError, NodeProvenance};
use crate::net::{Binding, MarkedAEPN, NetError, Phase, Place, Token};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("node {0} is not an action node of the current observation")]
    InvalidAction(usize),
    #[error("the episode is over; call reset")]
    EpisodeDone,
    #[error("reset must be called before step")]
    NotReset,
    #[error("not representable as a vector: {0}")]
    NotRepresentable(String),
    #[error("trace export failed: {0}")]
    Io(String),
}

#[derive(Clone, Debug)]
pub struct Observation {
    pub graph: AssignmentGraph,
    pub provenance: NodeProvenance,
    /// `A_Transition` node ids, ascending; empty once the episode is done.
    pub action_node_ids: Vec<usize>,
    pub clock: f64,
    /// Token counts per (place, color), when vector observations are enabled.
    pub vector: Option<Vec<f64>>,
    /// Vector action index → action node, when vector observations are enabled.
    pub vector_actions: Option<Vec<Option<usize>>>,
}

#[derive(Clone, Debug, Default)]
pub struct StepInfo {
    /// Decisions taken so far in the episode, including this one.
    pub decisions: usize,
    /// Part of the reward earned by the environment after the action.
    pub evolution_reward: f64,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub clock: f64,
    pub action_node: usize,
    pub transition: String,
    pub reward: f64,
}

#[derive(Clone, Debug)]
pub struct TaskEnv {
    template: MarkedAEPN,
    net: Option<MarkedAEPN>,
    obs: Option<Observation>,
    done: bool,
    vector: bool,
    /// Reward earned before the first decision, credited to the first step.
    pending: f64,
    decisions: usize,
    trace: Vec<TraceRow>,
}

impl TaskEnv {
    pub fn new(template: MarkedAEPN) -> Self {
        TaskEnv {
            template,
            net: None,
            obs: None,
            done: true,
            vector: false,
            pending: 0.0,
            decisions: 0,
            trace: Vec::new(),
        }
    }

    /// Also emit vector observations and the vector action map; fails for
    /// nets without finite color declarations.
    pub fn with_vector(mut self) -> Result<Self, EnvError> {
        vector_layout(&self.template)?;
        self.vector = true;
        Ok(self)
    }

    pub fn template(&self) -> &MarkedAEPN {
        &self.template
    }

    /// The live net of the current episode.
    pub fn net(&self) -> Option<&MarkedAEPN> {
        self.net.as_ref()
    }

    pub fn observation(&self) -> Option<&Observation> {
        self.obs.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn reset(&mut self, seed: u64) -> Result<Observation, EnvError> {
        let mut net = self.template.clone();
        net.reseed(seed);
        let start = net.cum_reward();
        let phase = net.run_until_decision()?;
        self.pending = net.cum_reward() - start;
        self.done = phase == Phase::Done;
        self.decisions = 0;
        self.trace.clear();
        let obs = self.observe(&net)?;
        self.net = Some(net);
        self.obs = Some(obs.clone());
        Ok(obs)
    }

    pub fn step(&mut self, node: usize) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(if self.net.is_none() {
                EnvError::NotReset
            } else {
                EnvError::EpisodeDone
            });
        }
        let (obs, net) = match (&self.obs, &mut self.net) {
            (Some(o), Some(n)) => (o, n),
            _ => return Err(EnvError::NotReset),
        };
        if !obs.action_node_ids.contains(&node) {
            return Err(EnvError::InvalidAction(node));
        }
        let origin = obs.provenance.action(node).ok_or(EnvError::InvalidAction(node))?;
        let tr = net
            .transition_index(&origin.source_transition)
            .ok_or_else(|| NetError::UnknownTransition(origin.source_transition.clone()))?;
        let binding = origin.binding.clone().ok_or(EnvError::InvalidAction(node))?;
        let clock = net.clock();
        let before = net.cum_reward();
        let action_reward = net.fire(tr, &binding)?;
        let phase = net.run_until_decision()?;
        let reward = net.cum_reward() - before + std::mem::take(&mut self.pending);
        self.decisions += 1;
        self.trace.push(TraceRow {
            step: self.decisions,
            clock,
            action_node: node,
            transition: net.transition(tr).id.clone(),
            reward,
        });
        self.done = phase == Phase::Done;
        let net = self.net.as_ref().expect("live net");
        let observation = self.observe(net)?;
        self.obs = Some(observation.clone());
        Ok(StepResult {
            observation,
            reward,
            done: self.done,
            info: StepInfo {
                decisions: self.decisions,
                evolution_reward: reward - action_reward,
            },
        })
    }

    fn observe(&self, net: &MarkedAEPN) -> Result<Observation, EnvError> {
        let (expanded, emap) = expand(net);
        let (graph, provenance) = map_to_graph(&expanded, Some(&emap))?;
        let action_node_ids = if self.done { Vec::new() } else { graph.action_nodes() };
        let (vector, vector_actions) = if self.vector {
            let actions = action_node_ids
                .iter()
                .map(|&n| {
                    let o = provenance.action(n).expect("action node provenance");
                    (n, o.source_transition.as_str(), o.binding.as_ref().expect("live binding"))
                })
                .collect::<Vec<_>>();
            (Some(vector_observation(net)?), Some(vector_action_map(net, &actions)?))
        } else {
            (None, None)
        };
        Ok(Observation {
            graph,
            provenance,
            action_node_ids,
            clock: net.clock(),
            vector,
            vector_actions,
        })
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<(), EnvError> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.trace {
            w.serialize(row).map_err(|e| EnvError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| EnvError::Io(e.to_string()))
    }

    pub fn save_trace(&self, path: &Path) -> Result<(), EnvError> {
        let f = std::fs::File::create(path).map_err(|e| EnvError::Io(e.to_string()))?;
        self.write_trace_csv(f)
    }
}

/// Picks the action whose bound tokens carry the largest `budget`; ties go
/// to the lowest node id.
pub fn greedy_policy(obs: &Observation) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &a in &obs.action_node_ids {
        let budget = obs
            .graph
            .predecessors(a)
            .filter_map(|p| obs.graph.attr(p, "budget"))
            .fold(f64::NEG_INFINITY, f64::max);
        if best.is_none_or(|(_, b)| budget > b) {
            best = Some((a, budget));
        }
    }
    best.map(|(a, _)| a)
}

/// Uniform choice among action nodes.
pub fn random_policy<R: Rng + ?Sized>(obs: &Observation, rng: &mut R) -> Option<usize> {
    match obs.action_node_ids.len() {
        0 => None,
        n => Some(obs.action_node_ids[rng.random_range(0..n)]),
    }
}

/// Colors per place, in place order.
fn vector_layout(net: &MarkedAEPN) -> Result<Vec<usize>, EnvError> {
    net.places().iter().map(color_count).collect()
}

fn color_count(p: &Place) -> Result<usize, EnvError> {
    if p.schema.is_empty() {
        return Ok(1);
    }
    match &p.colors {
        Some(domains) => Ok(domains.iter().map(|d| d.size()).product()),
        None => Err(EnvError::NotRepresentable(format!(
            "place `{}` has attributes without a finite color domain",
            p.id
        ))),
    }
}

fn color_index(p: &Place, t: &Token) -> Result<usize, EnvError> {
    let Some(domains) = &p.colors else {
        return if p.schema.is_empty() {
            Ok(0)
        } else {
            Err(EnvError::NotRepresentable(format!("place `{}` is not finite-color", p.id)))
        };
    };
    let mut idx = 0;
    for d in domains {
        let v = p.attr(t, &d.attr).expect("validated color attribute");
        let k = d.index_of(v).ok_or_else(|| {
            EnvError::NotRepresentable(format!("`{}.{}` = {v} is outside its color domain", p.id, d.attr))
        })?;
        idx = idx * d.size() + k;
    }
    Ok(idx)
}

/// Length of [`vector_observation`] for this net.
pub fn vector_len(net: &MarkedAEPN) -> Result<usize, EnvError> {
    Ok(vector_layout(net)?.iter().sum())
}

/// Counts of available tokens per (place, color), places in order.
pub fn vector_observation(net: &MarkedAEPN) -> Result<Vec<f64>, EnvError> {
    let layout = vector_layout(net)?;
    let mut out = vec![0.0; layout.iter().sum()];
    let mut offset = 0;
    for (p, n) in net.places().iter().zip(layout) {
        for t in p.marking.iter().filter(|t| t.time <= net.clock()) {
            out[offset + color_index(p, t)?] += 1.0;
        }
        offset += n;
    }
    Ok(out)
}

/// Number of vector actions: for each action transition, one per color
/// combination of its input places.
pub fn vector_action_count(net: &MarkedAEPN) -> Result<usize, EnvError> {
    let mut n = 0;
    for tr in net.action_transitions() {
        let mut k = 1;
        for &p in &net.transition(tr).inputs {
            k *= color_count(net.place(p))?;
        }
        n += k;
    }
    Ok(n)
}

/// Maps every vector action to the first action node (in binding
/// enumeration order) with matching colors.
fn vector_action_map(net: &MarkedAEPN, actions: &[(usize, &str, &Binding)]) -> Result<Vec<Option<usize>>, EnvError> {
    let mut out = vec![None; vector_action_count(net)?];
    let mut offsets = std::collections::HashMap::new();
    let mut offset = 0;
    for tr in net.action_transitions() {
        offsets.insert(net.transition(tr).id.as_str(), offset);
        let mut k = 1;
        for &p in &net.transition(tr).inputs {
            k *= color_count(net.place(p))?;
        }
        offset += k;
    }
    for &(node, tr_id, b) in actions {
        let mut idx = 0;
        for (p, t) in &b.assignments {
            let place = net.place(*p);
            idx = idx * color_count(place)? + color_index(place, t)?;
        }
        let slot = &mut out[offsets[tr_id] + idx];
        if slot.is_none() {
            *slot = Some(node);
        }
    }
    Ok(out)
}

/// Runs one episode with `policy`, returning the total reward.
pub fn run_episode(
    env: &mut TaskEnv,
    seed: u64,
    mut policy: impl FnMut(&Observation) -> Option<usize>,
) -> Result<f64, EnvError> {
    let mut obs = env.reset(seed)?;
    let mut total = 0.0;
    while !env.is_done() {
        let a = policy(&obs).ok_or(EnvError::EpisodeDone)?;
        let r = env.step(a)?;
        total += r.reward;
        obs = r.observation;
    }
    Ok(total + env.pending)
}
