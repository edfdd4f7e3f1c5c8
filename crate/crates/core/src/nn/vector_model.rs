//! MLP actor-critic over token-count vectors with a fixed action space.
//! Actions not available in a state are masked out of the softmax.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamSet;
use super::tensor::{Tape, Tensor, Var};
use super::{ActorCritic, ForwardOut, Mlp, NnError, LOG_PROB_FLOOR};
use crate::env::Observation;

#[derive(Clone, Debug, PartialEq)]
pub struct VectorInput {
    pub x: Vec<f64>,
    /// Available vector actions, ascending.
    pub valid: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct VectorActorCritic {
    pub inputs: usize,
    pub actions: usize,
    params: ParamSet,
    pi: Mlp,
    vf: Mlp,
}

impl VectorActorCritic {
    pub fn new(inputs: usize, actions: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let pi = Mlp::new(&mut params, "pi", inputs, hidden, actions, &mut rng);
        let vf = Mlp::new(&mut params, "vf", inputs, hidden, 1, &mut rng);
        VectorActorCritic {
            inputs,
            actions,
            params,
            pi,
            vf,
        }
    }
}

impl ActorCritic for VectorActorCritic {
    type Input = VectorInput;

    fn encode(&self, obs: &Observation) -> Result<(VectorInput, Vec<usize>), NnError> {
        let (Some(x), Some(map)) = (&obs.vector, &obs.vector_actions) else {
            return Err(NnError::NoVector);
        };
        let (valid, candidates): (Vec<usize>, Vec<usize>) =
            map.iter().enumerate().filter_map(|(a, n)| n.map(|n| (a, n))).unzip();
        if valid.is_empty() {
            return Err(NnError::NoActions);
        }
        Ok((VectorInput { x: x.clone(), valid }, candidates))
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(&self, tape: &mut Tape, vars: &[Var], batch: &[&VectorInput]) -> Result<ForwardOut, NnError> {
        if batch.is_empty() {
            return Err(NnError::Empty);
        }
        let mut data = Vec::with_capacity(batch.len() * self.inputs);
        let mut pick = Vec::new();
        let mut seg = Vec::new();
        for (b, inp) in batch.iter().enumerate() {
            if inp.valid.is_empty() {
                return Err(NnError::NoActions);
            }
            data.extend_from_slice(&inp.x);
            for &a in &inp.valid {
                pick.push(b * self.actions + a);
                seg.push(b);
            }
        }
        let x = tape.leaf(Tensor::from_vec(batch.len(), self.inputs, data));
        let logits = self.pi.forward(tape, vars, x);
        let flat = tape.reshape(logits, batch.len() * self.actions, 1);
        let chosen = tape.gather_rows(flat, Rc::new(pick));
        let seg = Rc::new(seg);
        let lp = tape.segment_log_softmax(chosen, seg.clone());
        let log_probs = tape.clamp(lp, LOG_PROB_FLOOR, 0.0);
        let values = self.vf.forward(tape, vars, x);
        Ok(ForwardOut {
            log_probs,
            segments: seg,
            values,
        })
    }
}
