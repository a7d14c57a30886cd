use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use rs2acf::data::results_to_string;
use rs2acf_cli::{run, BlobArgs, Method, RunConfig, Task};

#[derive(Parser)]
#[command(name = "rs2acf", version, about = "Robust semi-supervised adaptive concept factorization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit, run K-means on the representation and report AC and NMI.
    Cluster(Flags),
    /// Fit, label unlabeled samples by 1-NN and report accuracy over random splits.
    Classify(Flags),
    /// Compare Gaussian, LLE and adaptive weights by reconstruction error.
    Weights(Flags),
    /// Record objective traces across labeled ratios; fails if any trace rises.
    Trace(Flags),
}

/// Every flag overrides the matching key of `--config`.
#[derive(Args)]
struct Flags {
    /// JSON file with any of the keys below (snake_case).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// CSV with header `label,f0,f1,...`, one sample per row.
    #[arg(long, conflicts_with = "blobs")]
    data: Option<PathBuf>,
    /// Synthetic blobs, e.g. `c=3,n=30,d=10,sep=6,std=1` (n per class or `4/30/30`).
    #[arg(long)]
    blobs: Option<BlobArgs>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    labeled_ratio: Option<f64>,
    /// Comma-separated labeled ratios for `classify` and `trace`.
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    /// K-means runs per clustering score.
    #[arg(long)]
    restarts: Option<usize>,
    /// Random splits per classification score.
    #[arg(long)]
    splits: Option<usize>,
    /// LCCF graph weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Neighborhood size of the fixed graphs.
    #[arg(long)]
    neighbors: Option<usize>,
    /// Noise scale for the noisy `weights` variant.
    #[arg(long)]
    noise: Option<f64>,
    /// Record wall-clock timings (output is then no longer reproducible).
    #[arg(long)]
    timings: bool,
    /// Write results here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Flags {
    fn resolve(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        set!(method, alpha, beta, gamma, tol, max_iter, labeled_ratio, seed, restarts, splits, lambda, neighbors, noise);
        if let Some(v) = self.data {
            cfg.data = Some(v);
            cfg.blobs = None;
        }
        if let Some(v) = self.blobs {
            cfg.blobs = Some(v);
            cfg.data = None;
        }
        if self.rank.is_some() {
            cfg.rank = self.rank;
        }
        if self.ratios.is_some() {
            cfg.ratios = self.ratios;
        }
        if self.out.is_some() {
            cfg.out = self.out;
        }
        cfg.timings |= self.timings;
        Ok(cfg)
    }
}

fn execute(task: Task, flags: Flags) -> Result<bool> {
    let cfg = flags.resolve()?;
    let outcome = run(task, &cfg)?;
    let text = results_to_string(&outcome.results)?;
    match &cfg.out {
        Some(path) => std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    for f in &outcome.failures {
        eprintln!("check failed: {f}");
    }
    Ok(outcome.failures.is_empty())
}

fn main() -> ExitCode {
    let (task, flags) = match Cli::parse().command {
        Command::Cluster(f) => (Task::Cluster, f),
        Command::Classify(f) => (Task::Classify, f),
        Command::Weights(f) => (Task::Weights, f),
        Command::Trace(f) => (Task::Trace, f),
    };
    match execute(task, flags) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
