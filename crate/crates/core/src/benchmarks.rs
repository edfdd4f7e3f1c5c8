//! Results table over the three benchmark problems: Random, Greedy,
//! PPO-Vector and PPO-Graph.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{greedy_policy, random_policy, EnvError};
use crate::ppo::{evaluate_baseline, train_model, CurvePoint, Decode, EvalStats, ModelKind, PpoConfig, PpoError};
use crate::problems::{build_problem, ProblemId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Policy {
    Random,
    Greedy,
    PpoVector,
    PpoGraph,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Random, Policy::Greedy, Policy::PpoVector, Policy::PpoGraph];

    pub fn is_learned(self) -> bool {
        matches!(self, Policy::PpoVector | Policy::PpoGraph)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Random => "Random",
            Policy::Greedy => "Greedy",
            Policy::PpoVector => "PPO-Vector",
            Policy::PpoGraph => "PPO-Graph",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Stats { mean: f64, std: f64 },
    NotRepresentable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub problem: ProblemId,
    pub policy: Policy,
    pub episodes: usize,
    pub seed: u64,
    pub cell: Cell,
    /// Wall time, training included.
    pub runtime_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn get(&self, problem: ProblemId, policy: Policy) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.problem == problem && r.policy == policy)
    }

    /// CSV with columns `problem, policy, episodes, seed, mean, std, runtime_s`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), PpoError> {
        let io = |e: csv::Error| PpoError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["problem", "policy", "episodes", "seed", "mean", "std", "runtime_s"]).map_err(io)?;
        for r in &self.rows {
            let (mean, std) = match r.cell {
                Cell::Stats { mean, std } => (format!("{mean}"), format!("{std}")),
                Cell::NotRepresentable => ("not representable".to_string(), String::new()),
            };
            w.write_record([
                r.problem.to_string(),
                r.policy.to_string(),
                r.episodes.to_string(),
                r.seed.to_string(),
                mean,
                std,
                format!("{:.3}", r.runtime_s),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| PpoError::Io(e.to_string()))
    }
}

impl fmt::Display for ResultsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:<11} {:>20} {:>9} {:>10}", "problem", "policy", "return", "episodes", "runtime_s")?;
        for r in &self.rows {
            let cell = match r.cell {
                Cell::Stats { mean, std } => format!("{mean:.1} ± {std:.1}"),
                Cell::NotRepresentable => "not representable".to_string(),
            };
            writeln!(
                f,
                "{:<8} {:<11} {:>20} {:>9} {:>10.2}",
                r.problem.to_string(),
                r.policy.to_string(),
                cell,
                r.episodes,
                r.runtime_s
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableConfig {
    pub problems: Vec<ProblemId>,
    pub episodes: usize,
    pub seed: u64,
    /// Baselines only.
    pub skip_train: bool,
    /// Training settings shared by both learned policies; `total_updates` is
    /// overridden per problem by `updates`.
    pub ppo: PpoConfig,
    /// PPO updates for p1, p2, p3.
    pub updates: [usize; 3],
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            problems: ProblemId::ALL.to_vec(),
            episodes: 1000,
            seed: 0,
            skip_train: false,
            ppo: PpoConfig::default(),
            updates: [20, 30, 60],
        }
    }
}

impl TableConfig {
    pub fn ppo_for(&self, id: ProblemId) -> PpoConfig {
        let k = ProblemId::ALL.iter().position(|&p| p == id).expect("known problem");
        PpoConfig {
            total_updates: self.updates[k],
            seed: self.seed,
            ..self.ppo.clone()
        }
    }
}

/// Progress events of [`reproduce_table`].
pub enum Event<'a> {
    Row(&'a ResultRow),
    Curve(ProblemId, Policy, &'a CurvePoint),
}

/// Evaluates a baseline on one problem.
pub fn baseline_stats(id: ProblemId, policy: Policy, episodes: usize, seed: u64) -> Result<EvalStats, PpoError> {
    let template = build_problem(id);
    match policy {
        Policy::Greedy => evaluate_baseline(&template, episodes, seed, greedy_policy),
        Policy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00C0_FFEE);
            evaluate_baseline(&template, episodes, seed, |o| random_policy(o, &mut rng))
        }
        _ => Err(PpoError::Config(format!("{policy} is not a baseline"))),
    }
}

/// Fills the table, problem by problem.
pub fn reproduce_table(cfg: &TableConfig, mut progress: impl FnMut(Event<'_>)) -> Result<ResultsTable, PpoError> {
    let mut table = ResultsTable::default();
    for &id in &cfg.problems {
        let template = build_problem(id);
        for policy in Policy::ALL {
            if cfg.skip_train && policy.is_learned() {
                continue;
            }
            let start = Instant::now();
            let cell = match policy {
                Policy::Random | Policy::Greedy => {
                    let s = baseline_stats(id, policy, cfg.episodes, cfg.seed)?;
                    Cell::Stats { mean: s.mean, std: s.std }
                }
                Policy::PpoVector | Policy::PpoGraph => {
                    let kind = if policy == Policy::PpoGraph { ModelKind::Graph } else { ModelKind::Vector };
                    let ppo = cfg.ppo_for(id);
                    match train_model(kind, &template, &ppo, |p| progress(Event::Curve(id, policy, p))) {
                        Err(PpoError::Env(EnvError::NotRepresentable(_))) => Cell::NotRepresentable,
                        Err(e) => return Err(e),
                        Ok((model, _)) => {
                            let s = model.evaluate(&template, cfg.episodes, cfg.seed, Decode::Argmax)?;
                            Cell::Stats { mean: s.mean, std: s.std }
                        }
                    }
                }
            };
            table.rows.push(ResultRow {
                problem: id,
                policy,
                episodes: cfg.episodes,
                seed: cfg.seed,
                cell,
                runtime_s: start.elapsed().as_secs_f64(),
            });
            progress(Event::Row(table.rows.last().expect("just pushed")));
        }
    }
    Ok(table)
}
