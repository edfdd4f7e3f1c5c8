//! Small dense autodiff stack and the actor-critic networks built on it.
//!
//! [`GraphActorCritic`] encodes assignment graphs with heterogeneous graph
//! attention and scores action nodes; [`VectorActorCritic`] is an MLP over
//! token-count vectors with a fixed action space. Both implement
//! [`ActorCritic`], which is all the trainer needs.

mod graph_model;
mod params;
mod tensor;
mod vector_model;

use std::rc::Rc;

use thiserror::Error;

use crate::env::Observation;

pub use graph_model::{EncodedGraph, FeatureNormalizer, GraphActorCritic, GraphBatch, GraphModelConfig, GraphSchema};
pub use params::{clip_grad_norm, grad_norm, Adam, ParamSet, CHECKPOINT_VERSION};
pub use tensor::{matmul, Grads, Tape, Tensor, Var};
pub use vector_model::{VectorActorCritic, VectorInput};

/// Floor applied to log-probabilities.
pub const LOG_PROB_FLOOR: f64 = -30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("node type `{0}` is not registered with the model")]
    UnknownNodeType(String),
    #[error("node type `{ty}` expects {expected} attributes, got {got}")]
    AttributeCount { ty: String, expected: usize, got: usize },
    #[error("observation has no action candidates")]
    NoActions,
    #[error("empty batch or graph")]
    Empty,
    #[error("observation has no vector representation")]
    NoVector,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Batched network outputs.
pub struct ForwardOut {
    /// Log-probabilities of all candidates of all observations, stacked `[C, 1]`.
    pub log_probs: Var,
    /// Observation index of each candidate row.
    pub segments: Rc<Vec<usize>>,
    /// One state value per observation, `[B, 1]`.
    pub values: Var,
}

/// A policy/value model the trainer can drive.
pub trait ActorCritic {
    /// Model input prepared from one observation.
    type Input: Clone;

    /// Prepares an observation; `candidates[k]` is the action node chosen by
    /// picking candidate `k`.
    fn encode(&self, obs: &Observation) -> Result<(Self::Input, Vec<usize>), NnError>;

    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// Forward pass over a batch; `vars` are this model's parameters bound on `tape`.
    fn forward(&self, tape: &mut Tape, vars: &[Var], batch: &[&Self::Input]) -> Result<ForwardOut, NnError>;
}

/// Two dense layers with a ReLU between them.
#[derive(Clone, Debug)]
pub(crate) struct Mlp {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl Mlp {
    pub fn new<R: rand::Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Mlp {
            w1: params.glorot(&format!("{prefix}.w1"), input, hidden, rng),
            b1: params.zeros(&format!("{prefix}.b1"), 1, hidden),
            w2: params.glorot(&format!("{prefix}.w2"), hidden, output, rng),
            b2: params.zeros(&format!("{prefix}.b2"), 1, output),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Var {
        let h = tape.matmul(x, vars[self.w1]);
        let h = tape.add_row(h, vars[self.b1]);
        let h = tape.relu(h);
        let o = tape.matmul(h, vars[self.w2]);
        tape.add_row(o, vars[self.b2])
    }
}

/// Per-candidate probabilities (exp of the log-probabilities) of one
/// forward pass, split per observation.
pub fn split_probs(tape: &Tape, out: &ForwardOut) -> Vec<Vec<f64>> {
    let lp = tape.value(out.log_probs);
    let n = out.segments.iter().max().map_or(0, |m| m + 1);
    let mut res = vec![Vec::new(); n];
    for (v, &s) in lp.data.iter().zip(out.segments.iter()) {
        res[s].push(v.exp());
    }
    res
}

/// Mean per-observation entropy of the stacked log-probabilities.
pub fn mean_entropy(tape: &mut Tape, log_probs: Var, segments: &Rc<Vec<usize>>, batch: usize) -> Var {
    let p = tape.exp(log_probs);
    let plogp = tape.mul(p, log_probs);
    let per_obs = tape.scatter_add_rows(plogp, segments.clone(), batch);
    let s = tape.mean(per_obs);
    tape.scale(s, -1.0)
}
