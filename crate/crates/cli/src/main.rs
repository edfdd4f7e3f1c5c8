//! `aegraph` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aegraph::benchmarks::{reproduce_table, Event, TableConfig};
use aegraph::env::{greedy_policy, random_policy, TaskEnv};
use aegraph::expansion::{expand, ExpandedNetDocument};
use aegraph::graph::map_to_graph;
use aegraph::net::{MarkedAEPN, NetSpec};
use aegraph::ppo::{episode_seed, train_model, write_curve_csv, Decode, EvalStats, ModelKind, PpoConfig, TrainedModel};
use aegraph::problems::{build_problem, example_net, ProblemId};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "aegraph", version, about = "Task assignment on attributed A-E Petri nets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of episodes (where episodes are run).
    #[arg(long)]
    episodes: Option<usize>,
    /// Output file or directory; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BuiltinNet {
    Example,
    P1,
    P2,
    P3,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Greedy,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphFormat {
    Json,
    Dot,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Graph,
    Vector,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecodeArg {
    Argmax,
    Sample,
}

#[derive(Subcommand)]
enum Command {
    /// Print a built-in net as JSON.
    Net {
        which: BuiltinNet,
        #[command(flatten)]
        common: Common,
    },
    /// Run a net with a baseline policy and print the decision trace as CSV.
    Simulate {
        /// Net JSON file.
        #[arg(long, conflicts_with = "problem", required_unless_present = "problem")]
        net: Option<PathBuf>,
        /// Built-in problem instead of a file.
        #[arg(long)]
        problem: Option<ProblemId>,
        #[arg(long, value_enum, default_value_t = PolicyArg::Greedy)]
        policy: PolicyArg,
        #[command(flatten)]
        common: Common,
    },
    /// Expand a net JSON into its single-token form with provenance.
    Expand {
        net: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Map an expanded net JSON to its assignment graph.
    Map {
        expanded: PathBuf,
        #[arg(long, value_enum, default_value_t = GraphFormat::Json)]
        format: GraphFormat,
        #[command(flatten)]
        common: Common,
    },
    /// Train a policy; writes `model.json` and `curve.csv` into `--out`.
    Train {
        #[arg(long)]
        problem: ProblemId,
        #[arg(long, value_enum, default_value_t = ModelArg::Graph)]
        model: ModelArg,
        /// PPO configuration (TOML or JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured number of updates.
        #[arg(long)]
        updates: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on a problem.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        problem: ProblemId,
        #[arg(long, value_enum, default_value_t = DecodeArg::Argmax)]
        decode: DecodeArg,
        #[command(flatten)]
        common: Common,
    },
    /// Results table for all problems and policies; writes `results.csv` into `--out`.
    Reproduce {
        /// Baselines only.
        #[arg(long)]
        skip_train: bool,
        /// Table configuration (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_net(path: &Path) -> Result<MarkedAEPN> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    MarkedAEPN::from_json(&text).with_context(|| format!("loading {}", path.display()))
}

fn stats_json(s: &EvalStats, episodes: usize, seed: u64) -> String {
    serde_json::json!({ "episodes": episodes, "seed": seed, "mean": s.mean, "std": s.std }).to_string()
}

fn simulate(template: MarkedAEPN, policy: PolicyArg, common: &Common) -> Result<()> {
    let episodes = common.episodes.unwrap_or(1);
    let mut env = TaskEnv::new(template);
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed ^ 0x00C0_FFEE);
    let mut returns = Vec::with_capacity(episodes);
    let mut first_trace = Vec::new();
    for k in 0..episodes {
        let seed = if episodes == 1 { common.seed } else { episode_seed(common.seed, k) };
        let total = aegraph::env::run_episode(&mut env, seed, |o| match policy {
            PolicyArg::Greedy => greedy_policy(o),
            PolicyArg::Random => random_policy(o, &mut rng),
        })?;
        if k == 0 {
            env.write_trace_csv(&mut first_trace)?;
        }
        returns.push(total);
    }
    emit(common.out.as_deref(), &String::from_utf8(first_trace)?)?;
    let s = EvalStats::from_returns(returns);
    eprintln!("{episodes} episode(s): return {:.2} ± {:.2}", s.mean, s.std);
    Ok(())
}

fn load_ppo_config(path: Option<&Path>) -> Result<PpoConfig> {
    let Some(path) = path else {
        return Ok(PpoConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = if path.extension().is_some_and(|e| e == "json") {
        PpoConfig::from_json(&text)?
    } else {
        PpoConfig::from_toml(&text)?
    };
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Net { which, common } => {
            let spec: NetSpec = match which {
                BuiltinNet::Example => example_net(),
                BuiltinNet::P1 => build_problem(ProblemId::P1).to_spec(),
                BuiltinNet::P2 => build_problem(ProblemId::P2).to_spec(),
                BuiltinNet::P3 => build_problem(ProblemId::P3).to_spec(),
            };
            emit(common.out.as_deref(), &(serde_json::to_string_pretty(&spec)? + "\n"))
        }
        Command::Simulate {
            net,
            problem,
            policy,
            common,
        } => {
            let template = match (net, problem) {
                (Some(path), _) => read_net(&path)?,
                (None, Some(id)) => build_problem(id),
                (None, None) => bail!("pass --net or --problem"),
            };
            simulate(template, policy, &common)
        }
        Command::Expand { net, common } => {
            let src = read_net(&net)?;
            let (x, emap) = expand(&src);
            emit(common.out.as_deref(), &(ExpandedNetDocument::new(&x, &emap).to_json() + "\n"))
        }
        Command::Map {
            expanded,
            format,
            common,
        } => {
            let text = fs::read_to_string(&expanded).with_context(|| format!("reading {}", expanded.display()))?;
            let doc = ExpandedNetDocument::from_json(&text)?;
            let net = MarkedAEPN::build(&doc.net)?;
            let (g, _) = map_to_graph(&net, Some(&doc.expansion_map))?;
            let body = match format {
                GraphFormat::Json => g.to_json() + "\n",
                GraphFormat::Dot => g.to_dot(),
            };
            emit(common.out.as_deref(), &body)
        }
        Command::Train {
            problem,
            model,
            config,
            updates,
            common,
        } => {
            let mut cfg = load_ppo_config(config.as_deref())?;
            cfg.seed = common.seed;
            if let Some(u) = updates {
                cfg.total_updates = u;
            }
            if let Some(e) = common.episodes {
                cfg.eval_episodes = e;
            }
            let kind = match model {
                ModelArg::Graph => ModelKind::Graph,
                ModelArg::Vector => ModelKind::Vector,
            };
            let dir = common.out.unwrap_or_else(|| PathBuf::from("."));
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let template = build_problem(problem);
            let (trained, curve) = train_model(kind, &template, &cfg, |p| {
                eprintln!(
                    "update {:>4}  decisions {:>7}  eval {:8.1} ± {:6.1}  sampled {:8.1}  {:6.1}s",
                    p.update, p.decisions, p.eval_mean, p.eval_std, p.sample_mean, p.seconds
                )
            })?;
            fs::write(dir.join("model.json"), trained.to_json())?;
            write_curve_csv(&curve, fs::File::create(dir.join("curve.csv"))?)?;
            eprintln!("wrote {}", dir.display());
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            problem,
            decode,
            common,
        } => {
            let text = fs::read_to_string(&checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
            let model = TrainedModel::from_json(&text)?;
            let episodes = common.episodes.unwrap_or(1000);
            let decode = match decode {
                DecodeArg::Argmax => Decode::Argmax,
                DecodeArg::Sample => Decode::Sample,
            };
            let s = model.evaluate(&build_problem(problem), episodes, common.seed, decode)?;
            emit(common.out.as_deref(), &(stats_json(&s, episodes, common.seed) + "\n"))
        }
        Command::Reproduce {
            skip_train,
            config,
            common,
        } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    toml::from_str::<TableConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => TableConfig::default(),
            };
            cfg.seed = common.seed;
            cfg.skip_train |= skip_train;
            if let Some(e) = common.episodes {
                cfg.episodes = e;
            }
            let table = reproduce_table(&cfg, |ev| match ev {
                Event::Row(r) => eprintln!("done {} {} in {:.1}s", r.problem, r.policy, r.runtime_s),
                Event::Curve(id, policy, p) => {
                    eprintln!("  {id} {policy} update {:>4}  eval {:8.1}", p.update, p.eval_mean)
                }
            })?;
            print!("{table}");
            if let Some(dir) = &common.out {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                table.write_csv(fs::File::create(dir.join("results.csv"))?)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
