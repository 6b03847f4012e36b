//! Batch experiments, metrics output and the command-line front end.

mod cli;
pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use cli::cli_main;
pub use config::ExperimentConfig;

use crate::error::{Error, Result};
use crate::planner::ReturnRange;
use crate::world::{run_episode, EpisodeSetup, Policy};

pub const METRICS_HEADER: &str = "policy,K,seed,t,error_m";
pub const SUMMARY_HEADER: &str = "policy,K,t,mean_error_m,std_error_m";

/// Error series of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeMetrics {
    pub policy: Policy,
    pub seed: u64,
    pub errors: Vec<f64>,
    pub returns: ReturnRange,
}

/// Output of [`run_batch`], ordered by policy then episode index.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub policies: Vec<Policy>,
    pub episodes: Vec<EpisodeMetrics>,
}

/// Runs every policy on episodes `base_seed .. base_seed + num_episodes`.
///
/// Episodes run on `threads` workers (0 picks the rayon default). Results
/// are collected in job order, so the output does not depend on the thread
/// count.
pub fn run_batch(setup: &EpisodeSetup, policies: &[Policy], num_episodes: usize, base_seed: u64, threads: usize) -> Result<BatchResult> {
    let jobs: Vec<(Policy, u64)> = policies
        .iter()
        .flat_map(|p| (0..num_episodes as u64).map(move |i| (*p, base_seed.wrapping_add(i))))
        .collect();
    let run = || {
        jobs.par_iter()
            .map(|&(policy, seed)| {
                let setup = EpisodeSetup {
                    planner: crate::planner::PlannerConfig {
                        horizon: policy.horizon().max(1),
                        ..setup.planner
                    },
                    ..setup.clone()
                };
                run_episode(policy, &setup, seed).map(|r| EpisodeMetrics {
                    policy,
                    seed,
                    errors: r.errors,
                    returns: r.returns,
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))?;
    let episodes = pool.install(run)?;
    Ok(BatchResult {
        policies: policies.to_vec(),
        episodes,
    })
}

/// Formats `x` in fixed-point notation with 9 significant digits.
pub fn format_sig9(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0.00000000".to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let mut decimals = (8 - magnitude).max(0) as usize;
    let mut s = format!("{x:.decimals$}");
    // Rounding may carry into a new leading digit, e.g. 9.999999999 -> 10.00000000.
    let digits = s.chars().filter(|c| c.is_ascii_digit()).collect::<String>();
    if digits.trim_start_matches('0').len() > 9 && decimals > 0 {
        decimals -= 1;
        s = format!("{x:.decimals$}");
    }
    s
}

/// Per-step statistics of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSummary {
    pub policy: Policy,
    pub t: usize,
    pub mean: f64,
    /// Sample standard deviation, 0 for a single episode.
    pub std: f64,
}

impl BatchResult {
    pub fn episodes_of(&self, policy: Policy) -> impl Iterator<Item = &EpisodeMetrics> {
        self.episodes.iter().filter(move |e| e.policy == policy)
    }

    /// Mean and standard deviation of the error per policy and step, summed
    /// in episode order.
    pub fn summary(&self) -> Vec<StepSummary> {
        let mut out = Vec::new();
        for &policy in &self.policies {
            let runs: Vec<&EpisodeMetrics> = self.episodes_of(policy).collect();
            let steps = runs.iter().map(|r| r.errors.len()).min().unwrap_or(0);
            for t in 0..steps {
                let n = runs.len() as f64;
                let mean = runs.iter().map(|r| r.errors[t]).sum::<f64>() / n;
                let std = if runs.len() > 1 {
                    (runs.iter().map(|r| (r.errors[t] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                out.push(StepSummary { policy, t, mean, std });
            }
        }
        out
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for e in &self.episodes {
            for (t, err) in e.errors.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{},{}", e.policy.label(), e.policy.horizon(), e.seed, t, format_sig9(*err));
            }
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(SUMMARY_HEADER);
        s.push('\n');
        for row in self.summary() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                row.policy.label(),
                row.policy.horizon(),
                row.t,
                format_sig9(row.mean),
                format_sig9(row.std)
            );
        }
        s
    }

    /// Writes `metrics.csv` and `summary.csv` into `dir`, creating it.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let metrics = dir.join("metrics.csv");
        let summary = dir.join("summary.csv");
        std::fs::write(&metrics, self.metrics_csv()).map_err(|e| Error::io(&metrics, e))?;
        std::fs::write(&summary, self.summary_csv()).map_err(|e| Error::io(&summary, e))?;
        Ok((metrics, summary))
    }
}
