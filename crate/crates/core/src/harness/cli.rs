use std::ffi::OsString;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use super::{run_batch, ExperimentConfig};
use crate::error::{Error, Result};
use crate::observation::build_synthetic_table;
use crate::world::{run_episode, Policy};

#[derive(Debug, Parser)]
#[command(name = "srctrack", version, about = "Active acoustic source tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one episode and log every step.
    Simulate(RunArgs),
    /// Run all configured policies over all episodes and write CSV metrics.
    Batch(RunArgs),
    /// Write the synthetic observation table as CSV.
    GenTable {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "table.csv")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Observation table CSV, overriding the configuration.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Output directory (batch only).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed of the (first) episode.
    #[arg(long)]
    seed: Option<u64>,
    /// `random`, `patrol`, `mcts` or `mcts:K`; replaces the configured list.
    #[arg(long)]
    policy: Option<String>,
    /// Planning horizon used with `--policy mcts`.
    #[arg(long)]
    horizon: Option<usize>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.experiment.base_seed = seed;
        }
        if let Some(p) = &self.policy {
            let label = match (p.as_str(), self.horizon) {
                ("mcts", Some(k)) => format!("mcts:{k}"),
                ("mcts", None) => format!("mcts:{}", crate::planner::PlannerConfig::default().horizon),
                _ => p.clone(),
            };
            config.experiment.policies = vec![label];
        } else if let Some(k) = self.horizon {
            for p in config.experiment.policies.iter_mut().filter(|p| p.starts_with("mcts")) {
                *p = format!("mcts:{k}");
            }
        }
        config.validate()?;
        Ok(config)
    }
}

fn simulate(args: &RunArgs) -> Result<()> {
    let config = args.load()?;
    let table = Arc::new(config.observation_table(args.table.as_deref())?);
    let policy: Policy = config.policies()?[0];
    let mut setup = config.episode_setup(table)?;
    setup.planner.horizon = policy.horizon().max(1);
    let seed = config.experiment.base_seed;
    let result = run_episode(policy, &setup, seed)?;
    let ep = &result.episode;
    println!("policy={policy} seed={seed}");
    println!("t,action,aoa_deg,robot_x,robot_y,robot_theta,source_x,source_y,error_m");
    for (t, w) in ep.true_states.iter().enumerate() {
        let (action, aoa) = match t {
            0 => ("-".to_string(), "-".to_string()),
            _ => (ep.actions[t - 1].index.to_string(), ep.observations[t - 1].value.to_string()),
        };
        println!(
            "{t},{action},{aoa},{:.3},{:.3},{:.1},{:.3},{:.3},{:.4}",
            w.robot.x, w.robot.y, w.robot.theta, w.source.x, w.source.y, result.errors[t]
        );
    }
    Ok(())
}

fn batch(args: &RunArgs) -> Result<()> {
    let config = args.load()?;
    let table = Arc::new(config.observation_table(args.table.as_deref())?);
    let setup = config.episode_setup(table)?;
    let result = run_batch(
        &setup,
        &config.policies()?,
        config.experiment.num_episodes,
        config.experiment.base_seed,
        args.threads,
    )?;
    let (metrics, summary) = result.write(&args.out)?;
    eprintln!("wrote {} and {}", metrics.display(), summary.display());
    Ok(())
}

fn gen_table(config: Option<&PathBuf>, out: &PathBuf) -> Result<()> {
    let config = match config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    build_synthetic_table(&config.observation.synthetic_params())?.save(out)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 2,
        _ => 1,
    }
}

/// Runs the command line `argv` (including the program name) and returns
/// the process exit code: 0 on success, 1 on configuration errors, 2 on I/O
/// errors.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Batch(args) => batch(args),
        Command::GenTable { config, out } => gen_table(config.as_ref(), out),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
