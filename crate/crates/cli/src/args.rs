use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mfs_core::Method;

#[derive(Debug, Parser)]
#[command(name = "mfs", version, about = "Martingale foresight sampling decoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode one prompt and print the result as JSON.
    Decode {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        prompt: String,
    },
    /// Run a method over a dataset and emit a report.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Run every point of a parameter grid and print a comparison table.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',')]
        grid_lambda1: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        grid_beam_size: Vec<usize>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        grid_epsilon_stop: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        grid_rollouts: Vec<usize>,
    },
    /// Advantage statistics of correct and incorrect paths in run traces.
    Stats {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Differences between two reports.
    Compare {
        baseline: PathBuf,
        candidate: PathBuf,
        /// Run to pick from each report when it holds several.
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Synthetic,
    Scripted,
    Http,
}

/// Overrides applied on top of `--config` (or the built-in defaults).
#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    /// Named lambda1 preset, e.g. llama3.1-8b/gsm8k.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Recorded script for the scripted backend.
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long, env = "MFS_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Model name sent to the HTTP backend.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub beam_size: Option<usize>,
    #[arg(long)]
    pub rollouts: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon_stop: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<u32>,
    #[arg(long)]
    pub rollout_depth: Option<u32>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub token_budget: Option<u64>,
    /// Parameter count used for FLOPs.
    #[arg(long)]
    pub model_params: Option<u64>,
    #[arg(long)]
    pub benchmark: Option<String>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// json, csv or markdown.
    #[arg(long)]
    pub format: Option<String>,
    /// JSONL trace output.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// JSONL dataset with id, prompt and answer fields.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub dataset: Option<PathBuf>,
    /// Generate this many synthetic drift tasks instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Seed of the generated synthetic tasks.
    #[arg(long, default_value_t = 0, requires = "synthetic")]
    pub suite_seed: u64,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}
