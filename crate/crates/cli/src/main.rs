use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dira_core::channel::{simulate_trace, write_trace_csv, ChannelNetwork};
use dira_core::dira::enumerate_joint_actions;
use dira_core::harness::baselines::{lookahead_cost, lookahead_cost_by_patterns, oracle_greedy};
use dira_core::harness::{
    evaluate_policy, run_experiment, BaselinePolicy, Checkpoint, EvaluationReport, ExperimentConfig, Policy, Scenario,
};
use dira_core::lqr::{self, ClosureProbabilities};
use dira_core::{MatrixFile, PlantModel};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Parser)]
#[command(name = "dira", version, about = "Iterative deep-Q channel scheduling for networked control systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset: desk, n8m6, n12m9, n16m12.
    #[arg(long)]
    preset: Option<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        Ok(match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => ExperimentConfig::preset("desk")?,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the scheduler and write learning curves, checkpoints and a summary.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Derives the channel, exploration, weight and noise seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Also evaluate the trained policy of run 0 and all baselines.
        #[arg(long)]
        evaluate: bool,
    },
    /// Monte Carlo evaluation of a checkpoint or a baseline scheduler.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        /// uniform-random, stability-weighted-random, oracle-greedy or perfect-comm-lqr.
        #[arg(long)]
        baseline: Option<BaselinePolicy>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Convergence margin, steady-state lossy Riccati solution and residual.
    RiccatiCheck {
        #[arg(long)]
        plant: PathBuf,
        /// Closure probabilities: one value for all subsystems or one per subsystem.
        #[arg(long, value_delimiter = ',', required = true)]
        q: Vec<f64>,
        #[arg(long)]
        show_k: bool,
    },
    /// Draw a random plant from the configuration and write it as a matrix file.
    GenerateSystem {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the plant seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare the closed-form look-ahead cost with brute-force dropout
    /// enumeration for every joint action at a random state.
    EnumerateOracle {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        state_seed: u64,
    },
    /// Simulate the configured channels and write their state/outcome trace.
    ChannelTrace {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Train {
            cfg,
            out,
            seed,
            evaluate,
        } => train(cfg.load()?, &out, seed, evaluate),
        Command::Evaluate {
            cfg,
            checkpoint,
            baseline,
            episodes,
        } => {
            let cfg = cfg.load()?;
            let policy = match (checkpoint, baseline) {
                (Some(path), _) => Policy::Learned(Box::new(read_checkpoint(&path)?)),
                (None, Some(b)) => Policy::Baseline(b),
                (None, None) => bail!("pass --checkpoint or --baseline"),
            };
            let scenario = Scenario::from_config(&cfg)?;
            let report = evaluate_policy(&policy, &cfg, &scenario, episodes.unwrap_or(cfg.evaluation.episodes))?;
            print_report(&report);
            Ok(())
        }
        Command::RiccatiCheck { plant, q, show_k } => riccati_check(&plant, &q, show_k),
        Command::GenerateSystem { cfg, out, seed } => {
            let mut cfg = cfg.load()?;
            if let Some(s) = seed {
                cfg.seeds.plant = s;
            }
            let scenario = Scenario::from_config(&cfg)?;
            scenario.plant.to_matrix_file().write(&out)?;
            println!(
                "wrote {} subsystems (n = {}) to {}",
                scenario.plant.subsystems(),
                scenario.plant.state_dim(),
                out.display()
            );
            Ok(())
        }
        Command::EnumerateOracle { cfg, state_seed } => enumerate_oracle(&cfg.load()?, state_seed),
        Command::ChannelTrace { cfg, steps, out } => {
            let cfg = cfg.load()?;
            let mut net = ChannelNetwork::new(cfg.build_channels()?, cfg.seeds.channels);
            write_trace_csv(&simulate_trace(&mut net, steps), &out)?;
            println!("wrote {steps} steps for {} channels to {}", net.len(), out.display());
            Ok(())
        }
    }
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Ok(Checkpoint::from_matrix_file(&MatrixFile::read(path)?)?)
}

fn print_report(r: &EvaluationReport) {
    println!(
        "{}: mean per-stage cost {:.6} ± {:.6} over {} episodes ({} diverged)",
        r.policy,
        r.mean,
        r.std,
        r.episodes.len(),
        r.diverged_count
    );
}

fn train(mut cfg: ExperimentConfig, out: &Path, seed: Option<u64>, evaluate: bool) -> Result<()> {
    if let Some(s) = seed {
        cfg.seeds.override_with(s);
    }
    let result = run_experiment(&cfg, out, evaluate).with_context(|| format!("experiment in {}", out.display()))?;
    for log in &result.logs {
        if let (Some(last), None) = (log.epochs.last(), &log.aborted) {
            println!("run {}: final epoch mean cost {:.6}", log.run, last.mean_cost);
        } else if let Some(reason) = &log.aborted {
            println!("run {}: aborted ({reason})", log.run);
        }
    }
    result.reports.iter().for_each(print_report);
    for path in &result.written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn riccati_check(path: &Path, q: &[f64], show_k: bool) -> Result<()> {
    let plant = PlantModel::from_matrix_file(&MatrixFile::read(path)?)?;
    let n = plant.subsystems();
    let q = match q.len() {
        1 => ClosureProbabilities::uniform(n, q[0]),
        len if len == n => ClosureProbabilities::new(q.to_vec())?,
        len => bail!("{len} closure probabilities given for {n} subsystems"),
    };
    let margin = lqr::convergence_margin(plant.a(), &plant.state_dims(), &q)?;
    println!("convergence margin rho(Gamma A): {margin:.6} ({})", if margin < 1.0 { "below 1, recursion converges" } else { "inconclusive" });
    match lqr::solve_steady_state(&plant, &q, &Default::default()) {
        Ok(sol) => {
            println!("converged in {} iterations, residual {:.3e}", sol.iterations, sol.residual);
            if show_k {
                println!("{}", sol.k);
            }
        }
        Err(f) => println!("no steady state: {f}"),
    }
    Ok(())
}

fn enumerate_oracle(cfg: &ExperimentConfig, state_seed: u64) -> Result<()> {
    let scenario = Scenario::from_config(cfg)?;
    let plant = &scenario.plant;
    let success = scenario.true_success();
    let actions = enumerate_joint_actions(plant.subsystems(), success.len(), cfg.evaluation.enumeration_cap as u128)?;
    let q = ClosureProbabilities::uniform(plant.subsystems(), 1.0);
    let k = lqr::solve_steady_state(plant, &q, &cfg.control.riccati)
        .map_err(|f| anyhow::anyhow!("perfect-communication Riccati solve failed: {f}"))?
        .k;
    let mut rng = ChaCha8Rng::seed_from_u64(state_seed);
    let x = DVector::from_fn(plant.state_dim(), |_, _| StandardNormal.sample(&mut rng));

    let mut worst = 0.0f64;
    for a in &actions {
        let closed = lookahead_cost(plant, &x, &k, a, &success)?;
        let brute = lookahead_cost_by_patterns(plant, &x, &k, a, &success)?;
        worst = worst.max((closed - brute).abs() / brute.abs().max(1e-300));
    }
    let (best, cost) = oracle_greedy(plant, &x, &k, &success, &actions)?;
    println!("{} joint actions; max relative gap closed-form vs. dropout enumeration: {worst:.3e}", actions.len());
    println!("oracle action (1-based): {:?}, look-ahead cost {cost:.6}", best.one_based());
    Ok(())
}
