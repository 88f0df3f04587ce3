//! Martingale foresight sampling over reasoning steps.
//!
//! Each step of [`decode`]:
//!
//! 1. **expand**: every active path proposes `N` candidate steps and takes a
//!    foresight rollout after each one;
//! 2. **score**: a candidate's value is its Doob drift, the mean rollout
//!    quality minus the parent's current quality;
//! 3. **stop check**: the search ends once the best drift is at most
//!    `epsilon_stop` (or the step cap is hit);
//! 4. **select**: `M` candidates are drawn without replacement with weights
//!    `softmax(drift / temperature)`;
//! 5. **prune**: paths whose deficit to the leader reaches
//!    `mean + lambda1 * std` of the beam's deficits are dropped for good.
//!
//! After the stop, survivors are completed autoregressively and their
//! extracted answers are majority-voted.

mod answer;
mod beam;
mod config;
mod trace;

pub use answer::{majority_vote, normalize_answer};
pub use beam::{BeamState, Candidate, PathState, PruneRecord, ScoredCandidate};
pub use config::{AnswerPattern, DecodeConfig, DEFAULT_ANSWER_PATTERN};
pub use trace::{Baseline, PathAnswer, SelectedPath, StopReason, TraceEvent};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{phi_step_scores, PhiConfig};
use crate::model::{quality_of, ModelError, SequenceModel, StepOptions, Substream};
use crate::process::{self, adaptive_threshold, AdaptiveThreshold, estimate_predictable_advantage, has_converged, should_prune, ProcessError};
use crate::seed;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decode configuration: {0}")]
    InvalidConfig(String),
    #[error("backend call for path {path_id} failed: {source}")]
    Model {
        path_id: u64,
        #[source]
        source: ModelError,
    },
    #[error("numeric failure scoring candidate {candidate} of path {path_id}: {source}")]
    Numeric {
        path_id: u64,
        candidate: usize,
        #[source]
        source: ProcessError,
    },
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error("no usable candidate at step {step} after {attempts} attempt(s)")]
    Stalled { step: u32, attempts: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Mfs,
    Phi,
    ArCot,
    /// Foresight beam with uniform selection and no pruning; a control.
    UniformBeam,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mfs => "mfs",
            Method::Phi => "phi",
            Method::ArCot => "ar-cot",
            Method::UniformBeam => "uniform-beam",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mfs" => Ok(Method::Mfs),
            "phi" => Ok(Method::Phi),
            "ar-cot" => Ok(Method::ArCot),
            "uniform-beam" => Ok(Method::UniformBeam),
            other => Err(format!("unknown method {other:?} (expected mfs, phi, ar-cot or uniform-beam)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub method: Method,
    /// Winning answer, or empty when no path produced one (`flagged`).
    pub final_answer: String,
    pub flagged: bool,
    pub per_path_answers: Vec<PathAnswer>,
    pub tokens_generated: u64,
    pub rollout_tokens: u64,
    pub steps: u32,
    pub stop_reason: Option<StopReason>,
    pub prune_count: usize,
    pub replayable: bool,
    pub trace: Vec<TraceEvent>,
}

/// Candidates produced by one expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub candidates: Vec<Candidate>,
    pub attempts: u32,
}

struct Outcome {
    candidate: Option<Candidate>,
    tokens: u64,
    rollout_tokens: u64,
}

fn expand_one<M: SequenceModel + ?Sized>(
    model: &M,
    path: &PathState,
    index: usize,
    step: u32,
    attempt: u32,
    config: &DecodeConfig,
) -> Result<Outcome, DecodeError> {
    let wrap = |source| DecodeError::Model { path_id: path.id, source };
    let coords = [step as u64, path.id, index as u64, attempt as u64];
    let ordinal = (index + attempt as usize * config.rollouts_per_candidate) as u32;
    let options = StepOptions { delimiter: config.step_delimiter.clone(), max_tokens: config.max_step_tokens };
    let stream = Substream { seed: seed::derive(config.seed, &[&[seed::TAG_PROPOSE][..], &coords].concat()), ordinal };
    let step_sample = model.propose_step(&path.prefix, stream, &options).map_err(wrap)?;
    let mut tokens = step_sample.token_count();

    let continued = format!("{}{}", path.prefix, step_sample.text);
    let mut rollout_qualities = Vec::with_capacity(config.rollouts_per_estimate);
    let mut rollout_texts = Vec::with_capacity(config.rollouts_per_estimate);
    let mut rollout_tokens = 0;
    for r in 0..config.rollouts_per_estimate {
        let seed = seed::derive(config.seed, &[&[seed::TAG_ROLLOUT][..], &coords, &[r as u64]].concat());
        let ordinal = (r + attempt as usize * config.rollouts_per_estimate) as u32;
        let sample = model.rollout(&continued, config.rollout_depth, Substream { seed, ordinal }).map_err(wrap)?;
        rollout_tokens += sample.token_count();
        if sample.token_logprobs.is_empty() {
            continue;
        }
        rollout_qualities.push(quality_of(&sample).map_err(wrap)?);
        rollout_texts.push(sample.text);
    }
    tokens += rollout_tokens;

    let mut step_quality_fallback = false;
    if rollout_qualities.is_empty() {
        if step_sample.token_logprobs.is_empty() {
            return Ok(Outcome { candidate: None, tokens, rollout_tokens });
        }
        rollout_qualities.push(quality_of(&step_sample).map_err(wrap)?);
        rollout_texts.push(String::new());
        step_quality_fallback = true;
    }
    Ok(Outcome {
        candidate: Some(Candidate {
            parent_path_id: path.id,
            index,
            step_tokens: step_sample.token_count(),
            step_finish: step_sample.finish_reason,
            step_text: step_sample.text,
            rollout_qualities,
            rollout_texts,
            rollout_tokens,
            step_quality_fallback,
        }),
        tokens,
        rollout_tokens,
    })
}

/// Proposes `N` candidate steps for every active path and rolls each one out.
///
/// Backend calls run on the current rayon pool. Each call draws from its own
/// substream keyed by `(seed, step, path, candidate, attempt)` and results are
/// gathered in path-then-candidate order, so the outcome does not depend on
/// scheduling. An expansion in which no candidate carries a usable quality is
/// retried with fresh substreams up to `stall_retries` times.
pub fn expand_beam<M: SequenceModel + ?Sized>(
    model: &M,
    beam: &mut BeamState,
    config: &DecodeConfig,
) -> Result<Expansion, DecodeError> {
    let step = beam.step_index;
    let jobs: Vec<(&PathState, usize)> = beam
        .active_paths()
        .flat_map(|p| (0..config.rollouts_per_candidate).map(move |j| (p, j)))
        .collect();
    if jobs.is_empty() {
        return Err(DecodeError::Stalled { step, attempts: 0 });
    }
    let mut tokens = 0;
    let mut rollout_tokens = 0;
    for attempt in 0..=config.stall_retries {
        let outcomes: Vec<Result<Outcome, DecodeError>> =
            jobs.par_iter().map(|&(path, j)| expand_one(model, path, j, step, attempt, config)).collect();
        let mut candidates = Vec::with_capacity(jobs.len());
        for outcome in outcomes {
            let outcome = outcome?;
            tokens += outcome.tokens;
            rollout_tokens += outcome.rollout_tokens;
            candidates.extend(outcome.candidate);
        }
        if !candidates.is_empty() {
            beam.tokens_generated += tokens;
            beam.rollout_tokens += rollout_tokens;
            beam.step_index += 1;
            return Ok(Expansion { candidates, attempts: attempt + 1 });
        }
        log::debug!("expansion at step {step} produced no usable candidate (attempt {})", attempt + 1);
    }
    beam.tokens_generated += tokens;
    beam.rollout_tokens += rollout_tokens;
    Err(DecodeError::Stalled { step, attempts: config.stall_retries + 1 })
}

/// Attaches a Doob drift estimate to each candidate, preserving order.
///
/// A parent with no recorded quality yet (the prompt, on the first step) gets
/// the mean of all its candidates' rollout qualities as `F_0`, so first-step
/// drifts are centred on zero.
pub fn score_candidates(candidates: Vec<Candidate>, beam: &mut BeamState) -> Result<Vec<ScoredCandidate>, DecodeError> {
    let baseline_step = beam.step_index.saturating_sub(1);
    let mut fresh: Vec<u64> = Vec::new();
    for c in &candidates {
        let parent = beam.path(c.parent_path_id).ok_or(DecodeError::InvalidConfig(format!(
            "candidate refers to unknown path {}",
            c.parent_path_id
        )))?;
        if parent.trajectory.is_empty() && !fresh.contains(&c.parent_path_id) {
            fresh.push(c.parent_path_id);
        }
    }
    for id in fresh {
        let pooled: Vec<f64> = candidates
            .iter()
            .filter(|c| c.parent_path_id == id)
            .flat_map(|c| c.rollout_qualities.iter().copied())
            .collect();
        for (i, &q) in pooled.iter().enumerate() {
            process::check_finite("rollout quality", q)
                .map_err(|source| DecodeError::Numeric { path_id: id, candidate: i, source })?;
        }
        let f0 = process::mean(&pooled);
        let path = beam.path_mut(id).expect("checked above");
        path.trajectory.push(baseline_step, f0)?;
    }
    candidates
        .into_iter()
        .map(|c| {
            let previous = beam
                .path(c.parent_path_id)
                .and_then(|p| p.trajectory.latest_quality())
                .expect("every parent has a quality by now");
            let estimate = estimate_predictable_advantage(previous, &c.rollout_qualities).map_err(|source| {
                DecodeError::Numeric { path_id: c.parent_path_id, candidate: c.index, source }
            })?;
            Ok(ScoredCandidate { candidate: c, estimate })
        })
        .collect()
}

fn max_of(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(f64::NEG_INFINITY, f64::max)
}

fn limit_reached(config: &DecodeConfig, beam: &BeamState) -> Option<StopReason> {
    if beam.step_index >= config.max_steps {
        return Some(StopReason::HardCap);
    }
    match config.token_budget {
        Some(budget) if beam.tokens_generated >= budget => Some(StopReason::TokenBudget { tokens: beam.tokens_generated }),
        _ => None,
    }
}

/// Convergence test on the step's best drift, then the step cap and token
/// budget. `None` means keep searching.
pub fn check_stop(
    scored: &[ScoredCandidate],
    config: &DecodeConfig,
    beam: &BeamState,
) -> Result<Option<StopReason>, DecodeError> {
    if scored.is_empty() {
        return Err(DecodeError::InvalidConfig("check_stop needs at least one candidate".into()));
    }
    if config.stopping_enabled() {
        let max_drift = max_of(scored.iter().map(ScoredCandidate::drift));
        if has_converged(max_drift, config.epsilon_stop)? {
            return Ok(Some(StopReason::Converged { max_drift }));
        }
    }
    Ok(limit_reached(config, beam))
}

/// `softmax(scores / temperature)`, shifted by the maximum for stability.
pub fn softmax(scores: &[f64], temperature: f64) -> Result<Vec<f64>, DecodeError> {
    if scores.is_empty() {
        return Err(DecodeError::InvalidConfig("softmax over an empty score set".into()));
    }
    for &s in scores {
        process::check_finite("selection score", s)?;
    }
    let max = max_of(scores.iter().copied());
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let mut total = 0.0;
    for e in &exps {
        total += e;
    }
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Draws `k` distinct indices, one at a time, each with probability
/// proportional to its weight among those not yet drawn. Returns them in
/// ascending order.
pub(crate) fn sample_without_replacement<R: Rng>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    if k >= weights.len() {
        return (0..weights.len()).collect();
    }
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let mut total = 0.0;
        for &i in &remaining {
            total += weights[i];
        }
        let u = rng.random::<f64>() * total;
        let mut cum = 0.0;
        let mut pick = None;
        for (pos, &i) in remaining.iter().enumerate() {
            cum += weights[i];
            if u < cum {
                pick = Some(pos);
                break;
            }
        }
        // rounding can leave u at the very top of the range
        let pos = pick.unwrap_or_else(|| {
            remaining.iter().rposition(|&i| weights[i] > 0.0).unwrap_or(remaining.len() - 1)
        });
        chosen.push(remaining.remove(pos));
    }
    chosen.sort_unstable();
    chosen
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub weights: Vec<f64>,
    pub chosen: Vec<usize>,
    pub paths: Vec<SelectedPath>,
}

/// Replaces the beam with `M` children sampled from `scored` with weights
/// `softmax(scores / temperature)`.
///
/// `scores[i]` is the selection value of `scored[i]`. Each child extends its
/// parent's prefix by the candidate's step and records the candidate's mean
/// rollout quality as its newest trajectory point.
pub fn select_beam(
    beam: &mut BeamState,
    scored: &[ScoredCandidate],
    scores: &[f64],
    config: &DecodeConfig,
) -> Result<Selection, DecodeError> {
    if scored.is_empty() || scored.len() != scores.len() {
        return Err(DecodeError::InvalidConfig("selection needs one score per candidate".into()));
    }
    let weights = softmax(scores, config.temperature)?;
    let mut rng = seed::rng(seed::derive(config.seed, &[seed::TAG_SELECT, beam.step_index as u64]));
    let chosen = sample_without_replacement(&weights, config.beam_size, &mut rng);

    let mut children = Vec::with_capacity(chosen.len());
    let mut records = Vec::with_capacity(chosen.len());
    for &i in &chosen {
        let c = &scored[i].candidate;
        let parent = beam
            .path(c.parent_path_id)
            .ok_or_else(|| DecodeError::InvalidConfig(format!("candidate refers to unknown path {}", c.parent_path_id)))?
            .clone();
        let id = beam.allocate_id();
        let quality = process::mean(&c.rollout_qualities);
        let mut trajectory = process::QualityTrajectory::branch(&parent.trajectory, id);
        trajectory.push(beam.step_index, quality)?;
        children.push(PathState {
            id,
            parent: Some(parent.id),
            prefix: format!("{}{}", parent.prefix, c.step_text),
            trajectory,
            active: true,
        });
        records.push(SelectedPath { path_id: id, parent_path_id: parent.id, candidate: i, quality });
    }
    beam.paths = children;
    Ok(Selection { weights, chosen, paths: records })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub threshold: Option<AdaptiveThreshold>,
    pub records: Vec<PruneRecord>,
}


/// Deactivates every path whose deficit to the leader reaches this step's
/// adaptive threshold.
///
/// The threshold is built from the active paths' deficits. Paths tied for the
/// best quality are never pruned, and a zero-spread beam prunes nothing.
pub fn prune_beam(beam: &mut BeamState, config: &DecodeConfig) -> Result<PruneOutcome, DecodeError> {
    let active: Vec<(u64, f64)> = beam
        .active_paths()
        .map(|p| {
            let q = p.trajectory.latest_quality().ok_or(ProcessError::Precondition("active path has no quality"))?;
            Ok((p.id, q))
        })
        .collect::<Result<_, ProcessError>>()?;
    if active.len() <= 1 {
        return Ok(PruneOutcome { threshold: None, records: Vec::new() });
    }
    let best = max_of(active.iter().map(|&(_, q)| q));
    let deficits = active
        .iter()
        .map(|&(_, q)| process::deficit(best, q))
        .collect::<Result<Vec<f64>, _>>()?;
    let threshold = adaptive_threshold(&deficits, config.lambda1)?;
    let mut records = Vec::new();
    if threshold.sigma > 0.0 {
        for (&(id, q), &d) in active.iter().zip(&deficits) {
            if q < best && should_prune(d, &threshold)? {
                beam.path_mut(id).expect("active path exists").active = false;
                records.push(PruneRecord { path_id: id, step_index: beam.step_index, deficit_value: d, threshold });
            }
        }
    }
    beam.prune_log.extend_from_slice(&records);
    Ok(PruneOutcome { threshold: Some(threshold), records })
}

/// Finishes every active path autoregressively and majority-votes the
/// extracted answers.
pub fn finalize<M: SequenceModel + ?Sized>(
    model: &M,
    beam: &mut BeamState,
    config: &DecodeConfig,
) -> Result<(Vec<PathAnswer>, Option<usize>), DecodeError> {
    let pattern = AnswerPattern::new(&config.answer_pattern)?;
    let active: Vec<&PathState> = beam.active_paths().collect();
    let completions = active
        .par_iter()
        .map(|p| {
            let stream = Substream { seed: seed::derive(config.seed, &[seed::TAG_COMPLETE, p.id]), ordinal: 0 };
            model
                .complete(&p.prefix, config.completion_max_tokens, stream)
                .map_err(|source| DecodeError::Model { path_id: p.id, source })
        })
        .collect::<Vec<_>>();
    let mut answers = Vec::with_capacity(active.len());
    let mut tokens = 0;
    for (p, completion) in active.iter().zip(completions) {
        let completion = completion?;
        tokens += completion.token_count();
        let text = format!("{}{}", beam.generated_text(p), completion.text);
        answers.push(PathAnswer { path_id: p.id, answer: pattern.extract(&text), advantages: p.trajectory.increments() });
    }
    beam.tokens_generated += tokens;
    let winner = majority_vote(&answers.iter().map(|a| a.answer.clone()).collect::<Vec<_>>());
    Ok((answers, winner))
}

#[derive(Clone, Copy)]
pub(crate) enum Strategy<'a> {
    Martingale,
    Phi(&'a PhiConfig),
    Uniform,
}

impl Strategy<'_> {
    fn method(self) -> Method {
        match self {
            Strategy::Martingale => Method::Mfs,
            Strategy::Phi(_) => Method::Phi,
            Strategy::Uniform => Method::UniformBeam,
        }
    }
}

pub(crate) fn finish<M: SequenceModel + ?Sized>(
    model: &M,
    mut beam: BeamState,
    config: &DecodeConfig,
    method: Method,
    stop_reason: Option<StopReason>,
    mut trace: Vec<TraceEvent>,
) -> Result<DecodeResult, DecodeError> {
    let (answers, winner) = finalize(model, &mut beam, config)?;
    let final_answer = winner.and_then(|i| answers[i].answer.clone()).unwrap_or_default();
    let flagged = winner.is_none();
    trace.push(TraceEvent::Finalize {
        answers: answers.clone(),
        final_answer: final_answer.clone(),
        flagged,
        tokens_generated: beam.tokens_generated,
    });
    Ok(DecodeResult {
        method,
        final_answer,
        flagged,
        per_path_answers: answers,
        tokens_generated: beam.tokens_generated,
        rollout_tokens: beam.rollout_tokens,
        steps: beam.step_index,
        stop_reason,
        prune_count: beam.prune_log.len(),
        replayable: model.replayable(),
        trace,
    })
}

pub(crate) fn run_search<M: SequenceModel + ?Sized>(
    model: &M,
    prompt: &str,
    config: &DecodeConfig,
    strategy: Strategy<'_>,
) -> Result<DecodeResult, DecodeError> {
    config.validate()?;
    let pattern = AnswerPattern::new(&config.answer_pattern)?;
    let mut beam = BeamState::new(prompt);
    let mut trace = Vec::new();
    let stop_reason = loop {
        let Expansion { candidates, attempts } = expand_beam(model, &mut beam, config)?;
        let step = beam.step_index;
        trace.push(TraceEvent::Expand {
            step,
            attempts,
            candidates: candidates.clone(),
            tokens_generated: beam.tokens_generated,
        });

        let unscored: Vec<u64> = beam.active_paths().filter(|p| p.trajectory.is_empty()).map(|p| p.id).collect();
        let scored = score_candidates(candidates, &mut beam)?;
        let baselines = unscored
            .into_iter()
            .filter_map(|id| {
                let quality = beam.path(id)?.trajectory.latest_quality()?;
                Some(Baseline { path_id: id, quality })
            })
            .collect();
        let drifts: Vec<f64> = scored.iter().map(ScoredCandidate::drift).collect();

        let (scores, alignments, stop) = match strategy {
            Strategy::Martingale => (drifts.clone(), None, check_stop(&scored, config, &beam)?),
            Strategy::Phi(phi) => {
                let s = phi_step_scores(&scored, phi, &pattern)?;
                let stop = if s.largest_cluster_fraction >= phi.delta {
                    Some(StopReason::Consensus { fraction: s.largest_cluster_fraction })
                } else {
                    limit_reached(config, &beam)
                };
                (s.combined, Some(s.alignments), stop)
            }
            Strategy::Uniform => (vec![0.0; scored.len()], None, limit_reached(config, &beam)),
        };
        trace.push(TraceEvent::Score { step, baselines, drifts, alignments, scores: scores.clone() });

        let selection = select_beam(&mut beam, &scored, &scores, config)?;
        trace.push(TraceEvent::Select {
            step,
            weights: selection.weights,
            chosen: selection.chosen,
            paths: selection.paths,
        });

        if let Strategy::Martingale = strategy {
            let pruned = prune_beam(&mut beam, config)?;
            trace.push(TraceEvent::Prune {
                step,
                threshold: pruned.threshold,
                records: pruned.records,
                active: beam.active_paths().map(|p| p.id).collect(),
            });
        }

        if let Some(reason) = stop {
            beam.stopped = true;
            trace.push(TraceEvent::Stop { step, reason });
            break reason;
        }
    };
    finish(model, beam, config, strategy.method(), Some(stop_reason), trace)
}

/// Martingale foresight sampling from `prompt`.
pub fn decode<M: SequenceModel + ?Sized>(
    model: &M,
    prompt: &str,
    config: &DecodeConfig,
) -> Result<DecodeResult, DecodeError> {
    run_search(model, prompt, config, Strategy::Martingale)
}

/// The same foresight loop with uniform selection, no pruning and no
/// convergence stop. Serves as a budget-matched random control.
pub fn uniform_beam_decode<M: SequenceModel + ?Sized>(
    model: &M,
    prompt: &str,
    config: &DecodeConfig,
) -> Result<DecodeResult, DecodeError> {
    run_search(model, prompt, config, Strategy::Uniform)
}
