//! Dataset runs, parameter sweeps and trace statistics.
//!
//! Instance `i` of a dataset decodes with seed `derive(decode.seed, [i])`.
//! Instances run concurrently on a pool of `workers` threads; results are
//! aggregated in id order, so reports and traces do not depend on the worker
//! count.

use std::fmt::Write as _;
use std::io::BufRead;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{ar_cot_decode, phi_decode};
use crate::config::{BackendConfig, ConfigError, RunConfig};
use crate::dataset::TaskInstance;
use crate::metrics::{emit_report, is_correct, ExampleRecord, FailureRecord, MetricsError, ReportFormat, RunMetrics};
use crate::model::{HttpModel, ModelError, ScriptedModel, SequenceModel, SyntheticModel, SyntheticTask, SYNTHETIC_ANSWER_PATTERN};
use crate::process::{trajectory_statistics, ProcessError, TrajectoryStats};
use crate::search::{decode, uniform_beam_decode, DecodeConfig, DecodeError, DecodeResult, Method, TraceEvent};
use crate::seed;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

/// One line of a run trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub task_id: String,
    pub method: Method,
    pub gold: String,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    /// JSONL, one [`TraceLine`] per event.
    pub trace: Vec<u8>,
}

enum Backend {
    Synthetic,
    Scripted(ScriptedModel),
    Http(HttpModel),
}

impl Backend {
    fn build(config: &BackendConfig) -> Result<Self, RunError> {
        Ok(match config {
            BackendConfig::Synthetic => Backend::Synthetic,
            BackendConfig::Scripted { path } => Backend::Scripted(ScriptedModel::load(path)?),
            BackendConfig::Http(http) => Backend::Http(HttpModel::new(http.clone())?),
        })
    }
}

fn dispatch<M: SequenceModel + ?Sized>(
    model: &M,
    prompt: &str,
    decode_config: &DecodeConfig,
    config: &RunConfig,
) -> Result<DecodeResult, DecodeError> {
    match config.method {
        Method::Mfs => decode(model, prompt, decode_config),
        Method::Phi => {
            let phi = config.phi.as_ref().ok_or(DecodeError::InvalidConfig("phi method without phi config".into()))?;
            phi_decode(model, prompt, decode_config, phi)
        }
        Method::ArCot => ar_cot_decode(model, prompt, decode_config),
        Method::UniformBeam => uniform_beam_decode(model, prompt, decode_config),
    }
}

fn instance_config(config: &RunConfig, index: usize) -> DecodeConfig {
    let mut decode_config = config.decode.clone();
    decode_config.seed = seed::derive(config.decode.seed, &[index as u64]);
    decode_config
}

/// Synthetic prompts carry their own task and use the synthetic answer
/// format.
fn decode_with(
    config: &RunConfig,
    backend: &Backend,
    prompt: &str,
    mut decode_config: DecodeConfig,
) -> Result<DecodeResult, RunError> {
    Ok(match backend {
        Backend::Synthetic => {
            let model = SyntheticModel::new(SyntheticTask::from_prompt(prompt)?)?;
            decode_config.answer_pattern = SYNTHETIC_ANSWER_PATTERN.into();
            dispatch(&model, prompt, &decode_config, config)?
        }
        Backend::Scripted(model) => dispatch(model, prompt, &decode_config, config)?,
        Backend::Http(model) => dispatch(model, prompt, &decode_config, config)?,
    })
}

/// Decodes a single prompt with `config.decode` as given, seed included.
pub fn decode_prompt(config: &RunConfig, prompt: &str) -> Result<DecodeResult, RunError> {
    config.validate()?;
    let backend = Backend::build(&config.backend)?;
    decode_with(config, &backend, prompt, config.decode.clone())
}

fn append_trace(out: &mut Vec<u8>, task: &TaskInstance, result: &DecodeResult) -> Result<(), RunError> {
    for event in &result.trace {
        let line = TraceLine {
            task_id: task.id.clone(),
            method: result.method,
            gold: task.gold_answer.clone(),
            event: event.clone(),
        };
        serde_json::to_writer(&mut *out, &line).map_err(|e| MetricsError::Input(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(())
}

/// Runs `config.method` over `dataset` with the backend `config` names.
/// Per-instance failures are logged and recorded in the metrics, not
/// returned.
pub fn run(config: &RunConfig, dataset: &[TaskInstance]) -> Result<RunOutput, RunError> {
    config.validate()?;
    let backend = Backend::build(&config.backend)?;
    run_instances(config, dataset, |task, i| decode_with(config, &backend, &task.prompt, instance_config(config, i)))
}

/// [`run`] against a caller-supplied model; `config.backend` is ignored.
pub fn run_with_model<M: SequenceModel + ?Sized>(
    config: &RunConfig,
    dataset: &[TaskInstance],
    model: &M,
) -> Result<RunOutput, RunError> {
    config.validate()?;
    run_instances(config, dataset, |task, i| {
        Ok(dispatch(model, &task.prompt, &instance_config(config, i), config)?)
    })
}

fn run_instances<F>(config: &RunConfig, dataset: &[TaskInstance], decode_one: F) -> Result<RunOutput, RunError>
where
    F: Fn(&TaskInstance, usize) -> Result<DecodeResult, RunError> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let results: Vec<Result<DecodeResult, RunError>> =
        pool.install(|| dataset.par_iter().enumerate().map(|(i, task)| decode_one(task, i)).collect());

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by(|&a, &b| dataset[a].id.cmp(&dataset[b].id));
    let mut metrics = RunMetrics::new(
        config.method,
        config.metrics.benchmark.clone(),
        config.metrics.model_params,
        config.metrics.count_rollout_tokens,
    );
    let mut trace = Vec::new();
    for i in order {
        let task = &dataset[i];
        match &results[i] {
            Ok(result) => {
                metrics.push(ExampleRecord {
                    task_id: task.id.clone(),
                    predicted: result.final_answer.clone(),
                    gold: task.gold_answer.clone(),
                    correct: is_correct(&result.final_answer, &task.gold_answer),
                    tokens: result.tokens_generated,
                    rollout_tokens: result.rollout_tokens,
                    stop_step: result.steps,
                    prune_count: result.prune_count,
                });
                append_trace(&mut trace, task, result)?;
            }
            Err(e) => {
                log::warn!("instance {} failed: {e}", task.id);
                metrics.push_failure(FailureRecord { task_id: task.id.clone(), error: e.to_string() });
            }
        }
    }
    Ok(RunOutput { metrics, trace })
}

fn write_file(path: &PathBuf, bytes: &[u8]) -> Result<(), RunError> {
    std::fs::write(path, bytes).map_err(|source| RunError::Io { path: path.clone(), source })
}

/// Writes the report and trace to the paths named in `config.output`.
pub fn write_outputs(config: &RunConfig, outputs: &[&RunOutput]) -> Result<(), RunError> {
    if let Some(path) = &config.output.report {
        let format: ReportFormat = config.output.format.as_deref().unwrap_or("json").parse()?;
        let metrics: Vec<RunMetrics> = outputs.iter().map(|o| o.metrics.clone()).collect();
        write_file(path, &emit_report(&metrics, format)?)?;
    }
    if let Some(path) = &config.output.trace {
        let trace: Vec<u8> = outputs.iter().flat_map(|o| o.trace.iter().copied()).collect();
        write_file(path, &trace)?;
    }
    Ok(())
}

/// Values to sweep. An empty axis keeps the base configuration's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub lambda1: Vec<f64>,
    pub beam_size: Vec<usize>,
    pub epsilon_stop: Vec<f64>,
    pub rollouts_per_candidate: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda1: f64,
    pub beam_size: usize,
    pub epsilon_stop: f64,
    pub rollouts_per_candidate: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub point: SweepPoint,
    pub output: RunOutput,
}

fn axis<T: Copy>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

/// Grid points in nested order `lambda1`, `beam_size`, `epsilon_stop`, `N`
/// (last varies fastest). Point `i` uses seed `base.decode.seed + i`.
pub fn grid_points(base: &RunConfig, grid: &SweepGrid) -> Vec<SweepPoint> {
    let d = &base.decode;
    let mut points = Vec::new();
    for &lambda1 in &axis(&grid.lambda1, d.lambda1) {
        for &beam_size in &axis(&grid.beam_size, d.beam_size) {
            for &epsilon_stop in &axis(&grid.epsilon_stop, d.epsilon_stop) {
                for &n in &axis(&grid.rollouts_per_candidate, d.rollouts_per_candidate) {
                    let seed = d.seed.wrapping_add(points.len() as u64);
                    points.push(SweepPoint { lambda1, beam_size, epsilon_stop, rollouts_per_candidate: n, seed });
                }
            }
        }
    }
    points
}

/// One [`run`] per grid point.
pub fn sweep(base: &RunConfig, grid: &SweepGrid, dataset: &[TaskInstance]) -> Result<Vec<SweepRun>, RunError> {
    grid_points(base, grid)
        .into_iter()
        .map(|point| {
            let mut config = base.clone();
            config.decode.lambda1 = point.lambda1;
            config.decode.beam_size = point.beam_size;
            config.decode.epsilon_stop = point.epsilon_stop;
            config.decode.rollouts_per_candidate = point.rollouts_per_candidate;
            config.decode.seed = point.seed;
            Ok(SweepRun { point, output: run(&config, dataset)? })
        })
        .collect()
}

/// Markdown comparison of sweep runs, one row per grid point.
pub fn sweep_table(runs: &[SweepRun]) -> String {
    let mut out = String::from("| lambda1 | M | epsilon_stop | N | seed | Acc. | Tokens | FLOPs |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in runs {
        let p = &r.point;
        let m = &r.output.metrics;
        let acc = m.accuracy().map_or("-".to_string(), |a| format!("{:.2}", 100.0 * a));
        let _ = writeln!(
            out,
            "| {} | {} | {:e} | {} | {} | {} | {} | {:.2e} |",
            p.lambda1, p.beam_size, p.epsilon_stop, p.rollouts_per_candidate, p.seed, acc, m.tokens_generated, m.flops as f64
        );
    }
    out
}

/// Step-advantage statistics of finished paths, split by whether the path's
/// own answer matched gold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSplit {
    pub correct: Option<TrajectoryStats>,
    pub incorrect: Option<TrajectoryStats>,
}

impl std::fmt::Display for AdvantageSplit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let show = |s: Option<TrajectoryStats>| s.map_or("(-, -)".to_string(), |s| s.to_string());
        write!(f, "{} vs {}", show(self.correct), show(self.incorrect))
    }
}

/// Reads trace lines and pools the advantages of every finalized path.
/// Paths without recorded advantages are skipped.
pub fn advantage_statistics<R: BufRead>(reader: R) -> Result<AdvantageSplit, RunError> {
    let mut correct: Vec<Vec<f64>> = Vec::new();
    let mut incorrect: Vec<Vec<f64>> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let err = |message: String| RunError::Trace { line: i + 1, message };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if let TraceEvent::Finalize { answers, .. } = parsed.event {
            for a in answers.into_iter().filter(|a| !a.advantages.is_empty()) {
                let ok = a.answer.as_deref().is_some_and(|ans| is_correct(ans, &parsed.gold));
                if ok { correct.push(a.advantages) } else { incorrect.push(a.advantages) }
            }
        }
    }
    let stats = |group: &[Vec<f64>]| -> Result<Option<TrajectoryStats>, RunError> {
        if group.is_empty() { Ok(None) } else { Ok(Some(trajectory_statistics(group)?)) }
    };
    Ok(AdvantageSplit { correct: stats(&correct)?, incorrect: stats(&incorrect)? })
}
