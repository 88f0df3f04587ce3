//! Drift-process backend with analytically known arm qualities.
//!
//! A task has `arm_count` arms. The first step of every path commits to an
//! arm drawn from the softmax of `arm_prior`; every token after that is the
//! word `arm{i}` with log-probability drawn from `Normal(drifts[i],
//! noise_std)`. The committed arm is the path's answer, so the arm with the
//! largest drift is the correct answer by construction.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use super::{check_context, Capabilities, FinishReason, ModelError, SequenceModel, StepOptions, StepSample, Substream};
use crate::seed;

/// Answer pattern matching the synthetic backend's arm labels.
pub const SYNTHETIC_ANSWER_PATTERN: &str = r"arm(\d+)";

fn default_step_tokens() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    /// Per-arm mean of the per-token log-probability.
    pub drifts: Vec<f64>,
    pub noise_std: f64,
    /// Number of reasoning steps a completed path contains.
    pub horizon: u32,
    /// Arm selection logits; empty means uniform.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub arm_prior: Vec<f64>,
    #[serde(default = "default_step_tokens")]
    pub step_tokens: u32,
}

impl SyntheticTask {
    pub fn new(drifts: Vec<f64>, noise_std: f64, horizon: u32) -> Result<Self, ModelError> {
        let task = Self { drifts, noise_std, horizon, arm_prior: Vec::new(), step_tokens: default_step_tokens() };
        task.validate()?;
        Ok(task)
    }

    /// Two arms separated by `2 * half_gap`, the better one at `correct_arm`.
    pub fn two_arm(correct_arm: usize, half_gap: f64, noise_std: f64, horizon: u32) -> Result<Self, ModelError> {
        let mut drifts = vec![-half_gap, -half_gap];
        *drifts
            .get_mut(correct_arm)
            .ok_or(ModelError::Config(format!("arm {correct_arm} out of range for two arms")))? = half_gap;
        Self::new(drifts, noise_std, horizon)
    }

    /// `count` two-arm tasks (drifts +/-0.05, noise 0.2) with the correct arm
    /// position drawn from `seed`.
    pub fn two_arm_suite(count: usize, seed: u64) -> Vec<Self> {
        let mut rng = seed::rng(seed);
        (0..count)
            .map(|_| {
                let correct = rng.random_range(0..2usize);
                Self::two_arm(correct, 0.05, 0.2, 16).expect("static parameters are valid")
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.drifts.is_empty() {
            return bad("synthetic task needs at least one arm");
        }
        if self.drifts.iter().any(|d| !d.is_finite()) {
            return bad("arm drifts must be finite");
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad("noise_std must be finite and non-negative");
        }
        if self.horizon == 0 || self.step_tokens == 0 {
            return bad("horizon and step_tokens must be positive");
        }
        if !self.arm_prior.is_empty() && self.arm_prior.len() != self.drifts.len() {
            return bad("arm_prior must have one logit per arm");
        }
        if self.arm_prior.iter().any(|p| !p.is_finite()) {
            return bad("arm_prior logits must be finite");
        }
        let best = self.drifts[self.correct_arm()];
        if self.drifts.iter().filter(|&&d| d == best).count() > 1 {
            return bad("the best arm must be unique");
        }
        Ok(())
    }

    pub fn arm_count(&self) -> usize {
        self.drifts.len()
    }

    /// Index of the largest drift.
    pub fn correct_arm(&self) -> usize {
        let mut best = 0;
        for (i, &d) in self.drifts.iter().enumerate() {
            if d > self.drifts[best] {
                best = i;
            }
        }
        best
    }

    pub fn gold_answer(&self) -> String {
        self.correct_arm().to_string()
    }

    /// Probability that a fresh path commits to each arm.
    pub fn arm_probabilities(&self) -> Vec<f64> {
        if self.arm_prior.is_empty() {
            return vec![1.0 / self.arm_count() as f64; self.arm_count()];
        }
        let max = self.arm_prior.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.arm_prior.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// Single-line JSON encoding used as the task prompt.
    pub fn to_prompt(&self) -> String {
        serde_json::to_string(self).expect("task serialises")
    }

    pub fn from_prompt(prompt: &str) -> Result<Self, ModelError> {
        let task: Self = serde_json::from_str(prompt.trim())
            .map_err(|e| ModelError::Config(format!("prompt is not a synthetic task: {e}")))?;
        task.validate()?;
        Ok(task)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticModel {
    task: SyntheticTask,
    max_context: usize,
}

fn arm_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(SYNTHETIC_ANSWER_PATTERN).expect("valid pattern"))
}

impl SyntheticModel {
    pub fn new(task: SyntheticTask) -> Result<Self, ModelError> {
        task.validate()?;
        Ok(Self { task, max_context: 1 << 20 })
    }

    pub fn task(&self) -> &SyntheticTask {
        &self.task
    }

    /// First arm label in `prefix`, if the path has committed.
    fn committed_arm(&self, prefix: &str) -> Option<usize> {
        arm_regex()
            .captures(prefix)
            .and_then(|c| c[1].parse::<usize>().ok())
            .filter(|&i| i < self.task.arm_count())
    }

    fn draw_arm<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let probs = self.task.arm_probabilities();
        for (i, p) in probs.iter().enumerate() {
            cum += p;
            if u < cum {
                return i;
            }
        }
        probs.len() - 1
    }

    /// `tokens` copies of the arm word with their log-probabilities.
    fn emit(&self, prefix: &str, tokens: u32, stream: Substream) -> (String, Vec<f64>) {
        let mut rng = seed::rng(stream.seed);
        let arm = self.committed_arm(prefix).unwrap_or_else(|| self.draw_arm(&mut rng));
        let normal = Normal::new(self.task.drifts[arm], self.task.noise_std).expect("validated parameters");
        let mut text = String::new();
        let mut logprobs = Vec::with_capacity(tokens as usize);
        for _ in 0..tokens {
            text.push_str(" arm");
            text.push_str(&arm.to_string());
            logprobs.push(normal.sample(&mut rng));
        }
        (text, logprobs)
    }

    fn steps_taken(prefix: &str) -> u32 {
        prefix.matches('\n').count() as u32
    }
}

impl SequenceModel for SyntheticModel {
    fn capabilities(&self) -> Capabilities {
        Capabilities { supports_logprobs: true, max_context: self.max_context }
    }

    fn propose_step(&self, prefix: &str, stream: Substream, options: &StepOptions) -> Result<StepSample, ModelError> {
        check_context(prefix, self.capabilities())?;
        if options.max_tokens == 0 {
            return Err(ModelError::Precondition("max_tokens must be positive"));
        }
        let tokens = self.task.step_tokens.min(options.max_tokens);
        let (mut text, token_logprobs) = self.emit(prefix, tokens, stream);
        let finish_reason = if tokens == self.task.step_tokens {
            text.push_str(&options.delimiter);
            FinishReason::Delimiter
        } else {
            FinishReason::Length
        };
        Ok(StepSample { text, token_logprobs, finish_reason })
    }

    fn rollout(&self, prefix: &str, depth: u32, stream: Substream) -> Result<StepSample, ModelError> {
        check_context(prefix, self.capabilities())?;
        if depth == 0 {
            return Err(ModelError::Precondition("rollout depth must be positive"));
        }
        let (text, token_logprobs) = self.emit(prefix, depth, stream);
        Ok(StepSample { text, token_logprobs, finish_reason: FinishReason::Length })
    }

    fn complete(&self, prefix: &str, max_tokens: u32, stream: Substream) -> Result<StepSample, ModelError> {
        check_context(prefix, self.capabilities())?;
        if max_tokens == 0 {
            return Err(ModelError::Precondition("max_tokens must be positive"));
        }
        let remaining = self.task.horizon.saturating_sub(Self::steps_taken(prefix)).max(1);
        let tokens = remaining.min(max_tokens);
        let (text, token_logprobs) = self.emit(prefix, tokens, stream);
        let finish_reason = if tokens == remaining { FinishReason::EndOfSequence } else { FinishReason::Length };
        Ok(StepSample { text, token_logprobs, finish_reason })
    }
}
