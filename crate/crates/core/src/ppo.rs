//! Proximal policy optimization over variable-size observations.
//!
//! Works with any [`ActorCritic`]: rollouts run several environments in
//! lock-step with one batched forward pass per step, advantages come from
//! generalized advantage estimation, and updates minimize the clipped
//! surrogate plus value regression minus an entropy bonus.

use std::io::Write;
use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, Observation, TaskEnv};
use crate::net::MarkedAEPN;
use crate::nn::{
    clip_grad_norm, mean_entropy, ActorCritic, Adam, GraphActorCritic, GraphModelConfig, GraphSchema, NnError,
    ParamSet, Tape, Tensor, Var, VectorActorCritic,
};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("non-finite loss (policy {policy}, value {value}, entropy {entropy})")]
    NonFinite { policy: f64, value: f64, entropy: f64 },
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Observations per gradient step.
    pub minibatch: usize,
    /// Decisions collected per update, over all environments.
    pub rollout: usize,
    pub envs: usize,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    /// Rewards are multiplied by this before advantage estimation.
    pub reward_scale: f64,
    pub total_updates: usize,
    /// Evaluate every this many updates (and after the last one); 0 disables.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub hidden: usize,
    pub rounds: usize,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            lr: 3e-4,
            epochs: 4,
            minibatch: 64,
            rollout: 512,
            envs: 8,
            ent_coef: 0.01,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            reward_scale: 0.01,
            total_updates: 100,
            eval_every: 10,
            eval_episodes: 50,
            hidden: 64,
            rounds: 2,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must be in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.epochs == 0 || self.minibatch == 0 || self.rollout == 0 || self.envs == 0 {
            return bad("epochs, minibatch, rollout and envs must be positive");
        }
        if self.hidden == 0 {
            return bad("hidden size must be positive");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, PpoError> {
        let c: PpoConfig = toml::from_str(text).map_err(|e| PpoError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json(text: &str) -> Result<Self, PpoError> {
        let c: PpoConfig = serde_json::from_str(text).map_err(|e| PpoError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Decisions per environment per update.
    pub fn steps_per_env(&self) -> usize {
        self.rollout.div_ceil(self.envs)
    }

    pub fn decision_budget(&self) -> usize {
        self.total_updates * self.steps_per_env() * self.envs
    }
}

/// One decision in a rollout.
#[derive(Clone, Debug)]
pub struct TransitionRecord<I> {
    pub input: I,
    /// Action node per candidate.
    pub candidates: Vec<usize>,
    /// Chosen candidate index.
    pub action: usize,
    pub node: usize,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

/// Per-environment trajectories of one collection period.
#[derive(Clone, Debug)]
pub struct RolloutBuffer<I> {
    pub trajectories: Vec<Vec<TransitionRecord<I>>>,
    /// Value of the state following each trajectory's last record (0 if it ended an episode).
    pub bootstrap: Vec<f64>,
    /// Unscaled returns of episodes completed during collection.
    pub episode_returns: Vec<f64>,
}

impl<I> RolloutBuffer<I> {
    pub fn len(&self) -> usize {
        self.trajectories.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> impl Iterator<Item = &TransitionRecord<I>> {
        self.trajectories.iter().flatten()
    }
}

/// Advantages and returns of one trajectory:
/// `A_t = sum_k (gamma*lambda)^k delta_{t+k}`, with
/// `delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        carry = delta + gamma * lambda * live * carry;
        adv[t] = carry;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Zero mean, unit standard deviation (left unchanged when degenerate).
pub fn normalize(xs: &mut [f64]) {
    if xs.len() < 2 {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    for x in xs.iter_mut() {
        *x = (*x - mean) / (std + 1e-8);
    }
}

/// Advantages and returns for a whole buffer in record order, scaling rewards.
pub fn buffer_advantages<I>(buf: &RolloutBuffer<I>, cfg: &PpoConfig) -> (Vec<f64>, Vec<f64>) {
    let mut adv = Vec::with_capacity(buf.len());
    let mut ret = Vec::with_capacity(buf.len());
    for (traj, &boot) in buf.trajectories.iter().zip(&buf.bootstrap) {
        let r: Vec<f64> = traj.iter().map(|t| t.reward * cfg.reward_scale).collect();
        let v: Vec<f64> = traj.iter().map(|t| t.value).collect();
        let d: Vec<bool> = traj.iter().map(|t| t.done).collect();
        let (a, g) = compute_gae(&r, &v, &d, boot, cfg.gamma, cfg.lambda);
        adv.extend(a);
        ret.extend(g);
    }
    (adv, ret)
}

/// Candidate probabilities and values for a batch of inputs.
pub fn act_batch<M: ActorCritic>(model: &M, inputs: &[&M::Input]) -> Result<(Vec<Vec<f64>>, Vec<f64>), NnError> {
    let mut tape = Tape::new();
    let vars = model.params().bind(&mut tape);
    let out = model.forward(&mut tape, &vars, inputs)?;
    let probs = crate::nn::split_probs(&tape, &out);
    let values = tape.value(out.values).data.clone();
    Ok((probs, values))
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, p) in probs.iter().enumerate() {
        u -= p;
        if u <= 0.0 {
            return i;
        }
    }
    probs.len() - 1
}

fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// A live environment in a rollout.
pub struct EnvSlot<I> {
    pub env: TaskEnv,
    seeds: ChaCha8Rng,
    sampler: ChaCha8Rng,
    current: Option<(I, Vec<usize>)>,
    episode_return: f64,
}

/// Creates `n` environments over `template`; vector observations when `vector`.
pub fn make_envs<I>(template: &MarkedAEPN, n: usize, vector: bool, seed: u64) -> Result<Vec<EnvSlot<I>>, PpoError> {
    (0..n)
        .map(|i| {
            let env = TaskEnv::new(template.clone());
            let env = if vector { env.with_vector()? } else { env };
            let base = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
            Ok(EnvSlot {
                env,
                seeds: ChaCha8Rng::seed_from_u64(base),
                sampler: ChaCha8Rng::seed_from_u64(base ^ 0x5555_5555),
                current: None,
                episode_return: 0.0,
            })
        })
        .collect()
}

/// Resets until an episode offers at least one decision, returning the
/// rewards of decision-free episodes.
fn start_episode<M: ActorCritic>(model: &M, slot: &mut EnvSlot<M::Input>) -> Result<(), PpoError> {
    loop {
        let seed = slot.seeds.random::<u64>();
        let obs = slot.env.reset(seed)?;
        slot.episode_return = 0.0;
        if !slot.env.is_done() {
            slot.current = Some(model.encode(&obs)?);
            return Ok(());
        }
    }
}

/// Collects `cfg.steps_per_env()` decisions from every environment.
pub fn collect_rollouts<M: ActorCritic>(
    model: &M,
    envs: &mut [EnvSlot<M::Input>],
    cfg: &PpoConfig,
) -> Result<RolloutBuffer<M::Input>, PpoError> {
    for slot in envs.iter_mut() {
        if slot.current.is_none() {
            start_episode(model, slot)?;
        }
    }
    let mut trajectories: Vec<Vec<TransitionRecord<M::Input>>> = envs.iter().map(|_| Vec::new()).collect();
    let mut episode_returns = Vec::new();
    for _ in 0..cfg.steps_per_env() {
        let inputs: Vec<&M::Input> = envs.iter().map(|s| &s.current.as_ref().expect("live episode").0).collect();
        let (probs, values) = act_batch(model, &inputs)?;
        for (i, slot) in envs.iter_mut().enumerate() {
            let k = sample_index(&probs[i], &mut slot.sampler);
            let (input, candidates) = slot.current.take().expect("live episode");
            let node = candidates[k];
            let step = slot.env.step(node)?;
            slot.episode_return += step.reward;
            trajectories[i].push(TransitionRecord {
                input,
                node,
                candidates,
                action: k,
                log_prob: probs[i][k].ln().max(crate::nn::LOG_PROB_FLOOR),
                reward: step.reward,
                value: values[i],
                done: step.done,
            });
            if step.done {
                episode_returns.push(slot.episode_return);
                start_episode(model, slot)?;
            } else {
                slot.current = Some(model.encode(&step.observation)?);
            }
        }
    }
    // Bootstrap values for trajectories cut mid-episode.
    let inputs: Vec<&M::Input> = envs.iter().map(|s| &s.current.as_ref().expect("live episode").0).collect();
    let (_, values) = act_batch(model, &inputs)?;
    let bootstrap = trajectories
        .iter()
        .zip(values)
        .map(|(t, v)| if t.last().is_some_and(|r| r.done) { 0.0 } else { v })
        .collect();
    Ok(RolloutBuffer {
        trajectories,
        bootstrap,
        episode_returns,
    })
}

/// Loss terms of one minibatch.
pub struct PpoLoss {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
    /// Probability ratio of each chosen action, `[B, 1]`.
    pub ratio: Var,
}

/// Clipped-surrogate loss of `batch` with the given advantages and returns.
#[allow(clippy::too_many_arguments)]
pub fn ppo_loss<M: ActorCritic>(
    model: &M,
    tape: &mut Tape,
    vars: &[Var],
    batch: &[&TransitionRecord<M::Input>],
    advantages: &[f64],
    returns: &[f64],
    cfg: &PpoConfig,
) -> Result<PpoLoss, PpoError> {
    let inputs: Vec<&M::Input> = batch.iter().map(|r| &r.input).collect();
    let out = model.forward(tape, vars, &inputs)?;
    // Row of each chosen candidate among the stacked candidates.
    let mut offset = 0;
    let mut rows = Vec::with_capacity(batch.len());
    for r in batch {
        rows.push(offset + r.action);
        offset += r.candidates.len();
    }
    let new_lp = tape.gather_rows(out.log_probs, Rc::new(rows));
    let old_lp = tape.leaf(Tensor::column(batch.iter().map(|r| r.log_prob).collect()));
    let adv = tape.leaf(Tensor::column(advantages.to_vec()));
    let ret = tape.leaf(Tensor::column(returns.to_vec()));

    let diff = tape.sub(new_lp, old_lp);
    let ratio = tape.exp(diff);
    let s1 = tape.mul(ratio, adv);
    let clipped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    let s2 = tape.mul(clipped, adv);
    let surr = tape.min(s1, s2);
    let surr = tape.mean(surr);
    let policy = tape.scale(surr, -1.0);

    let err = tape.sub(out.values, ret);
    let sq = tape.mul(err, err);
    let value = tape.mean(sq);

    let entropy = mean_entropy(tape, out.log_probs, &out.segments, batch.len());

    let v = tape.scale(value, cfg.vf_coef);
    let e = tape.scale(entropy, -cfg.ent_coef);
    let total = tape.add(policy, v);
    let total = tape.add(total, e);
    Ok(PpoLoss {
        total,
        policy,
        value,
        entropy,
        ratio,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// Several epochs of minibatch updates on one buffer.
pub fn ppo_update<M: ActorCritic>(
    model: &mut M,
    opt: &mut Adam,
    buf: &RolloutBuffer<M::Input>,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats, PpoError> {
    let (mut adv, ret) = buffer_advantages(buf, cfg);
    normalize(&mut adv);
    let records: Vec<&TransitionRecord<M::Input>> = buf.records().collect();
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut stats = UpdateStats::default();
    let mut steps = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch) {
            let batch: Vec<&TransitionRecord<M::Input>> = chunk.iter().map(|&i| records[i]).collect();
            let a: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
            let r: Vec<f64> = chunk.iter().map(|&i| ret[i]).collect();
            let mut tape = Tape::new();
            let vars = model.params().bind(&mut tape);
            let loss = ppo_loss(model, &mut tape, &vars, &batch, &a, &r, cfg)?;
            let (pl, vl, en) = (
                tape.value(loss.policy).item(),
                tape.value(loss.value).item(),
                tape.value(loss.entropy).item(),
            );
            if !(pl.is_finite() && vl.is_finite() && en.is_finite()) {
                return Err(PpoError::NonFinite {
                    policy: pl,
                    value: vl,
                    entropy: en,
                });
            }
            let ratios = &tape.value(loss.ratio).data;
            let kl = ratios.iter().map(|r| r - 1.0 - r.ln()).sum::<f64>() / ratios.len() as f64;
            let clipped = ratios.iter().filter(|r| (**r - 1.0).abs() > cfg.clip).count() as f64 / ratios.len() as f64;
            let mut grads = tape.backward(loss.total);
            let mut g = model.params().collect_grads(&vars, &mut grads);
            let norm = clip_grad_norm(&mut g, cfg.max_grad_norm);
            opt.step(model.params_mut(), &g);
            stats.policy_loss += pl;
            stats.value_loss += vl;
            stats.entropy += en;
            stats.approx_kl += kl;
            stats.clip_fraction += clipped;
            stats.grad_norm += norm;
            steps += 1;
        }
    }
    let k = steps.max(1) as f64;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.approx_kl /= k;
    stats.clip_fraction /= k;
    stats.grad_norm /= k;
    Ok(stats)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decode {
    Argmax,
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalStats {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

impl EvalStats {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        EvalStats {
            mean,
            std: var.sqrt(),
            returns,
        }
    }

    /// Standard deviation of the mean.
    pub fn sem(&self) -> f64 {
        self.std / (self.returns.len().max(1) as f64).sqrt()
    }
}

/// Seed of evaluation episode `k`.
pub fn episode_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(k as u64)
}

/// Runs `episodes` episodes with the model, batching decisions across
/// concurrently running episodes.
pub fn evaluate<M: ActorCritic>(
    model: &M,
    template: &MarkedAEPN,
    vector: bool,
    episodes: usize,
    seed: u64,
    decode: Decode,
) -> Result<EvalStats, PpoError> {
    const LANES: usize = 32;
    let mut returns = vec![0.0; episodes];
    let mut sampler = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_A5A5);
    let mut next = 0usize;
    let mut lanes: Vec<(usize, TaskEnv, M::Input, Vec<usize>)> = Vec::new();
    let new_env = || -> Result<TaskEnv, PpoError> {
        let env = TaskEnv::new(template.clone());
        Ok(if vector { env.with_vector()? } else { env })
    };
    loop {
        while lanes.len() < LANES && next < episodes {
            let k = next;
            next += 1;
            let mut env = new_env()?;
            let obs = env.reset(episode_seed(seed, k))?;
            if env.is_done() {
                continue;
            }
            let (input, cands) = model.encode(&obs)?;
            lanes.push((k, env, input, cands));
        }
        if lanes.is_empty() {
            break;
        }
        let inputs: Vec<&M::Input> = lanes.iter().map(|l| &l.2).collect();
        let (probs, _) = act_batch(model, &inputs)?;
        let mut keep = Vec::with_capacity(lanes.len());
        for ((k, mut env, _, cands), p) in lanes.into_iter().zip(probs) {
            let choice = match decode {
                Decode::Argmax => argmax(&p),
                Decode::Sample => sample_index(&p, &mut sampler),
            };
            let step = env.step(cands[choice])?;
            returns[k] += step.reward;
            if !step.done {
                let (input, cands) = model.encode(&step.observation)?;
                keep.push((k, env, input, cands));
            }
        }
        lanes = keep;
    }
    Ok(EvalStats::from_returns(returns))
}

/// Runs `policy` (an observation → node rule) for `episodes` episodes.
pub fn evaluate_baseline(
    template: &MarkedAEPN,
    episodes: usize,
    seed: u64,
    mut policy: impl FnMut(&Observation) -> Option<usize>,
) -> Result<EvalStats, PpoError> {
    let mut env = TaskEnv::new(template.clone());
    let mut returns = Vec::with_capacity(episodes);
    for k in 0..episodes {
        returns.push(crate::env::run_episode(&mut env, episode_seed(seed, k), &mut policy)?);
    }
    Ok(EvalStats::from_returns(returns))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub update: usize,
    pub decisions: usize,
    pub eval_mean: f64,
    pub eval_std: f64,
    pub sample_mean: f64,
    pub train_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub seconds: f64,
}

pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], out: W) -> Result<(), PpoError> {
    let mut w = csv::Writer::from_writer(out);
    for p in curve {
        w.serialize(p).map_err(|e| PpoError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| PpoError::Io(e.to_string()))
}

/// Trains `model` on `template` for `cfg.total_updates` updates and returns
/// the learning curve.
pub fn train<M: ActorCritic>(
    model: &mut M,
    template: &MarkedAEPN,
    vector: bool,
    cfg: &PpoConfig,
    mut progress: impl FnMut(&CurvePoint),
) -> Result<Vec<CurvePoint>, PpoError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut envs = make_envs(template, cfg.envs, vector, cfg.seed)?;
    let mut opt = Adam::new(model.params(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0F0F_0F0F);
    let mut curve = Vec::new();
    let mut decisions = 0;
    let mut recent: Vec<f64> = Vec::new();
    for update in 1..=cfg.total_updates {
        let buf = collect_rollouts(model, &mut envs, cfg)?;
        decisions += buf.len();
        recent.extend(&buf.episode_returns);
        let stats = ppo_update(model, &mut opt, &buf, cfg, &mut rng)?;
        let due = cfg.eval_every > 0 && (update % cfg.eval_every == 0 || update == cfg.total_updates);
        if due {
            let eval_seed = cfg.seed.wrapping_add(1_000_000);
            let greedy = evaluate(model, template, vector, cfg.eval_episodes, eval_seed, Decode::Argmax)?;
            let sampled = evaluate(model, template, vector, cfg.eval_episodes, eval_seed, Decode::Sample)?;
            let train_return = if recent.is_empty() {
                f64::NAN
            } else {
                recent.iter().sum::<f64>() / recent.len() as f64
            };
            recent.clear();
            let point = CurvePoint {
                update,
                decisions,
                eval_mean: greedy.mean,
                eval_std: greedy.std,
                sample_mean: sampled.mean,
                train_return,
                policy_loss: stats.policy_loss,
                value_loss: stats.value_loss,
                entropy: stats.entropy,
                seconds: start.elapsed().as_secs_f64(),
            };
            progress(&point);
            curve.push(point);
        }
    }
    Ok(curve)
}

/// Which network family a checkpoint holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Graph,
    Vector,
}

/// A trained model with everything needed to rebuild it.
#[derive(Clone, Debug)]
pub enum TrainedModel {
    Graph(GraphActorCritic),
    Vector(VectorActorCritic),
}

#[derive(Serialize, Deserialize)]
struct SavedModel {
    kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema: Option<GraphSchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    graph_config: Option<GraphModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vector_shape: Option<[usize; 3]>,
    params: String,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Graph(_) => ModelKind::Graph,
            TrainedModel::Vector(_) => ModelKind::Vector,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            TrainedModel::Graph(m) => m.params(),
            TrainedModel::Vector(m) => m.params(),
        }
    }

    pub fn evaluate(&self, template: &MarkedAEPN, episodes: usize, seed: u64, decode: Decode) -> Result<EvalStats, PpoError> {
        match self {
            TrainedModel::Graph(m) => evaluate(m, template, false, episodes, seed, decode),
            TrainedModel::Vector(m) => evaluate(m, template, true, episodes, seed, decode),
        }
    }

    pub fn to_json(&self) -> String {
        let saved = match self {
            TrainedModel::Graph(m) => SavedModel {
                kind: ModelKind::Graph,
                schema: Some(m.schema.clone()),
                graph_config: Some(m.config.clone()),
                vector_shape: None,
                params: m.params().to_json(),
            },
            TrainedModel::Vector(m) => SavedModel {
                kind: ModelKind::Vector,
                schema: None,
                graph_config: None,
                vector_shape: Some([m.inputs, m.actions, m.params().get("pi.w1").map_or(0, |t| t.cols)]),
                params: m.params().to_json(),
            },
        };
        serde_json::to_string(&saved).expect("models always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, PpoError> {
        let bad = |m: &str| PpoError::Nn(NnError::Checkpoint(m.to_string()));
        let saved: SavedModel = serde_json::from_str(text).map_err(|e| bad(&e.to_string()))?;
        let params = ParamSet::from_json(&saved.params)?;
        let mut model = match saved.kind {
            ModelKind::Graph => TrainedModel::Graph(GraphActorCritic::new(
                saved.schema.ok_or_else(|| bad("graph checkpoint without schema"))?,
                saved.graph_config.ok_or_else(|| bad("graph checkpoint without config"))?,
            )),
            ModelKind::Vector => {
                let [i, a, h] = saved.vector_shape.ok_or_else(|| bad("vector checkpoint without shape"))?;
                TrainedModel::Vector(VectorActorCritic::new(i, a, h, 0))
            }
        };
        match &mut model {
            TrainedModel::Graph(m) => m.params_mut().load_from(&params)?,
            TrainedModel::Vector(m) => m.params_mut().load_from(&params)?,
        }
        Ok(model)
    }
}

/// Builds a fresh model of the given kind for `template`.
pub fn new_model(kind: ModelKind, template: &MarkedAEPN, cfg: &PpoConfig) -> Result<TrainedModel, PpoError> {
    Ok(match kind {
        ModelKind::Graph => TrainedModel::Graph(GraphActorCritic::for_net(
            template,
            GraphModelConfig {
                hidden: cfg.hidden,
                rounds: cfg.rounds,
                seed: cfg.seed,
                ..GraphModelConfig::default()
            },
        )),
        ModelKind::Vector => TrainedModel::Vector(VectorActorCritic::new(
            crate::env::vector_len(template)?,
            crate::env::vector_action_count(template)?,
            cfg.hidden,
            cfg.seed,
        )),
    })
}

/// Trains a model of the given kind from scratch.
pub fn train_model(
    kind: ModelKind,
    template: &MarkedAEPN,
    cfg: &PpoConfig,
    progress: impl FnMut(&CurvePoint),
) -> Result<(TrainedModel, Vec<CurvePoint>), PpoError> {
    let mut model = new_model(kind, template, cfg)?;
    let curve = match &mut model {
        TrainedModel::Graph(m) => train(m, template, false, cfg, progress)?,
        TrainedModel::Vector(m) => train(m, template, true, cfg, progress)?,
    };
    Ok((model, curve))
}
