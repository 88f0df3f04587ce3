mod args;

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::error::ErrorKind;
use clap::Parser;
use mfs_core::config::{BackendConfig, ConfigError, RunConfig};
use mfs_core::dataset::{load_dataset, synthetic_suite, DatasetError, TaskInstance};
use mfs_core::metrics::{compare_runs, emit_report, parse_report, MetricsError, ReportFormat, RunMetrics};
use mfs_core::model::HttpConfig;
use mfs_core::runner::{self, RunError, SweepGrid};
use mfs_core::search::DecodeError;
use mfs_core::{Method, PhiConfig};

use args::{BackendKind, Cli, Command, DataArgs, RunArgs};

/// Usage mistakes detected after argument parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    Usage(message.into()).into()
}

fn build_config(args: &RunArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let mut c = RunConfig::new(args.method.unwrap_or(Method::Mfs), BackendConfig::Synthetic);
            c.phi = (c.method == Method::Phi).then(PhiConfig::default);
            c.apply_env(|k| std::env::var(k).ok());
            c
        }
    };
    if let Some(method) = args.method {
        config.method = method;
        if method != Method::Phi {
            config.phi = None;
        } else if config.phi.is_none() {
            config.phi = Some(PhiConfig::default());
        }
    }
    match args.backend {
        Some(BackendKind::Synthetic) => config.backend = BackendConfig::Synthetic,
        Some(BackendKind::Scripted) => {
            let path = args.script.clone().ok_or_else(|| usage("--backend scripted needs --script"))?;
            config.backend = BackendConfig::Scripted { path };
        }
        Some(BackendKind::Http) => {
            let (Some(endpoint), Some(model)) = (&args.endpoint, &args.model) else {
                return Err(usage("--backend http needs --endpoint and --model"));
            };
            config.backend = BackendConfig::Http(HttpConfig::new(endpoint.clone(), model.clone()));
            config.apply_env(|k| std::env::var(k).ok());
        }
        None => {}
    }
    if let Some(preset) = &args.preset {
        config.decode.lambda1 = mfs_core::config::preset_lambda1(preset)
            .ok_or_else(|| usage(format!("unknown preset {preset:?}")))?;
        config.preset = Some(preset.clone());
    }

    let d = &mut config.decode;
    macro_rules! set {
        ($field:expr, $value:expr) => {
            if let Some(v) = $value.clone() {
                $field = v;
            }
        };
    }
    set!(d.seed, args.seed);
    set!(d.lambda1, args.lambda1);
    set!(d.beam_size, args.beam_size);
    set!(d.rollouts_per_candidate, args.rollouts);
    set!(d.epsilon_stop, args.epsilon_stop);
    set!(d.max_steps, args.max_steps);
    set!(d.rollout_depth, args.rollout_depth);
    set!(d.temperature, args.temperature);
    if args.token_budget.is_some() {
        d.token_budget = args.token_budget;
    }
    set!(config.workers, args.workers);
    set!(config.metrics.model_params, args.model_params);
    set!(config.metrics.benchmark, args.benchmark);
    if args.report.is_some() {
        config.output.report = args.report.clone();
    }
    if args.format.is_some() {
        config.output.format = args.format.clone();
    }
    if args.trace.is_some() {
        config.output.trace = args.trace.clone();
    }
    config.validate()?;
    Ok(config)
}

fn load_tasks(data: &DataArgs) -> Result<Vec<TaskInstance>> {
    match (&data.dataset, data.synthetic) {
        (Some(path), _) => Ok(load_dataset(path)?),
        (None, Some(count)) => Ok(synthetic_suite(count, data.suite_seed)),
        (None, None) => Err(usage("one of --dataset or --synthetic is required")),
    }
}

fn report_format(config: &RunConfig) -> Result<ReportFormat> {
    Ok(config.output.format.as_deref().unwrap_or("json").parse()?)
}

/// Writes configured outputs; without a report path the report goes to stdout.
fn finish(config: &RunConfig, outputs: &[&runner::RunOutput], out: &mut impl Write) -> Result<()> {
    runner::write_outputs(config, outputs)?;
    if config.output.report.is_none() {
        let metrics: Vec<RunMetrics> = outputs.iter().map(|o| o.metrics.clone()).collect();
        out.write_all(&emit_report(&metrics, report_format(config)?)?)?;
    }
    Ok(())
}

fn read_report(path: &Path, method: Option<Method>) -> Result<RunMetrics> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let runs = parse_report(&bytes).with_context(|| format!("report {}", path.display()))?;
    let mut picked: Vec<RunMetrics> = runs.into_iter().filter(|r| method.is_none_or(|m| r.method == m)).collect();
    match picked.len() {
        1 => Ok(picked.remove(0)),
        0 => Err(usage(format!("{} has no matching run", path.display()))),
        n => Err(usage(format!("{} holds {n} runs; choose one with --method", path.display()))),
    }
}

fn execute(command: Command, out: &mut impl Write) -> Result<()> {
    match command {
        Command::Decode { run, prompt } => {
            let config = build_config(&run)?;
            let result = runner::decode_prompt(&config, &prompt)?;
            serde_json::to_writer_pretty(&mut *out, &result)?;
            writeln!(out)?;
        }
        Command::Bench { run, data } => {
            let config = build_config(&run)?;
            let tasks = load_tasks(&data)?;
            let output = runner::run(&config, &tasks)?;
            for failure in &output.metrics.failures {
                log::warn!("{}: {}", failure.task_id, failure.error);
            }
            finish(&config, &[&output], out)?;
        }
        Command::Sweep { run, data, grid_lambda1, grid_beam_size, grid_epsilon_stop, grid_rollouts } => {
            let config = build_config(&run)?;
            let tasks = load_tasks(&data)?;
            let grid = SweepGrid {
                lambda1: grid_lambda1,
                beam_size: grid_beam_size,
                epsilon_stop: grid_epsilon_stop,
                rollouts_per_candidate: grid_rollouts,
            };
            let runs = runner::sweep(&config, &grid, &tasks)?;
            let outputs: Vec<&runner::RunOutput> = runs.iter().map(|r| &r.output).collect();
            runner::write_outputs(&config, &outputs)?;
            out.write_all(runner::sweep_table(&runs).as_bytes())?;
        }
        Command::Stats { traces } => {
            let mut text = Vec::new();
            for path in &traces {
                let mut file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
                file.read_to_end(&mut text)?;
                if text.last().is_some_and(|&b| b != b'\n') {
                    text.push(b'\n');
                }
            }
            let split = runner::advantage_statistics(BufReader::new(text.as_slice()))?;
            serde_json::to_writer_pretty(&mut *out, &split)?;
            writeln!(out)?;
        }
        Command::Compare { baseline, candidate, method } => {
            let a = read_report(&baseline, method)?;
            let b = read_report(&candidate, method)?;
            let comparison = compare_runs(&a, &b)?;
            serde_json::to_writer_pretty(&mut *out, &comparison)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Stable category of a failure for the error record.
fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return "usage";
        }
        if cause.is::<ConfigError>() {
            return "config";
        }
        if cause.is::<DatasetError>() {
            return "dataset";
        }
        if cause.is::<MetricsError>() {
            return "metrics";
        }
        if cause.is::<DecodeError>() {
            return "decode";
        }
        if let Some(e) = cause.downcast_ref::<RunError>() {
            return match e {
                RunError::Config(_) => "config",
                RunError::Model(_) => "model",
                RunError::Decode(_) => "decode",
                RunError::Metrics(_) => "metrics",
                RunError::Process(_) => "process",
                RunError::Io { .. } => "io",
                RunError::Trace { .. } => "trace",
                RunError::Pool(_) => "internal",
            };
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "internal"
}

fn error_record(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": message, "kind": kind }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", error_record("usage", message.trim()));
            return ExitCode::from(2);
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(cli.command, &mut out).and_then(|()| out.flush().map_err(|e| anyhow!(e))) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = error_kind(&err);
            eprintln!("{}", error_record(kind, &format!("{err:#}")));
            ExitCode::from(if kind == "usage" { 2 } else { 1 })
        }
    }
}
