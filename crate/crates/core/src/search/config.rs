use regex::Regex;
use serde::{Deserialize, Serialize};

use super::DecodeError;

/// Generic "answer is X" extractor; last match wins.
pub const DEFAULT_ANSWER_PATTERN: &str = r"(?i)answer(?:\s+is)?\s*[:=]?\s*\$?([^\s$]+)";

/// Search parameters shared by the foresight decoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// Step beam size `M`.
    pub beam_size: usize,
    /// `N`: candidate steps proposed per active path, each with its own
    /// foresight rollout.
    pub rollouts_per_candidate: usize,
    /// Rollouts averaged into each candidate's drift estimate (1..=N).
    pub rollouts_per_estimate: usize,
    /// Softmax temperature applied to step values during selection.
    pub temperature: f64,
    /// Pruning sensitivity in `mu + lambda1 * sigma`.
    pub lambda1: f64,
    /// Convergence tolerance on the best drift. `-inf` disables the test.
    pub epsilon_stop: f64,
    pub max_steps: u32,
    /// Tokens per foresight rollout.
    pub rollout_depth: u32,
    pub max_step_tokens: u32,
    /// Token cap for the autoregressive finish of each surviving path.
    pub completion_max_tokens: u32,
    pub seed: u64,
    pub step_delimiter: String,
    pub answer_pattern: String,
    /// Stop expanding once this many tokens have been generated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_budget: Option<u64>,
    /// Extra attempts when an expansion yields no usable candidate.
    pub stall_retries: u32,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_size: 8,
            rollouts_per_candidate: 8,
            rollouts_per_estimate: 1,
            temperature: 1.0,
            lambda1: 0.8,
            epsilon_stop: 1e-6,
            max_steps: 16,
            rollout_depth: 32,
            max_step_tokens: 64,
            completion_max_tokens: 1024,
            seed: 0,
            step_delimiter: "\n".into(),
            answer_pattern: DEFAULT_ANSWER_PATTERN.into(),
            token_budget: None,
            stall_retries: 2,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        let bad = |m: &str| Err(DecodeError::InvalidConfig(m.to_string()));
        if self.beam_size == 0 {
            return bad("beam_size must be at least 1");
        }
        if self.rollouts_per_candidate == 0 {
            return bad("rollouts_per_candidate must be at least 1");
        }
        if self.rollouts_per_estimate == 0 || self.rollouts_per_estimate > self.rollouts_per_candidate {
            return bad("rollouts_per_estimate must lie in 1..=rollouts_per_candidate");
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("temperature must be positive and finite");
        }
        if !(self.lambda1.is_finite() && self.lambda1 >= 0.0) {
            return bad("lambda1 must be non-negative and finite");
        }
        if !(self.epsilon_stop == f64::NEG_INFINITY || (self.epsilon_stop.is_finite() && self.epsilon_stop >= 0.0)) {
            return bad("epsilon_stop must be non-negative (or -inf to disable)");
        }
        if self.max_steps == 0 || self.rollout_depth == 0 || self.max_step_tokens == 0 || self.completion_max_tokens == 0
        {
            return bad("max_steps and all token limits must be positive");
        }
        if self.step_delimiter.is_empty() {
            return bad("step_delimiter must not be empty");
        }
        AnswerPattern::new(&self.answer_pattern)?;
        Ok(())
    }

    pub fn stopping_enabled(&self) -> bool {
        self.epsilon_stop.is_finite()
    }
}

/// Compiled answer extractor.
#[derive(Debug, Clone)]
pub struct AnswerPattern(Regex);

impl AnswerPattern {
    pub fn new(pattern: &str) -> Result<Self, DecodeError> {
        Regex::new(pattern)
            .map(Self)
            .map_err(|e| DecodeError::InvalidConfig(format!("answer_pattern does not compile: {e}")))
    }

    /// Last match in `text`, using capture group 1 when the pattern has one.
    /// Surrounding punctuation is trimmed; an empty result is no answer.
    pub fn extract(&self, text: &str) -> Option<String> {
        let caps = self.0.captures_iter(text).last()?;
        let m = caps.get(1).or_else(|| caps.get(0))?;
        let trimmed = m
            .as_str()
            .trim()
            .trim_start_matches(['(', '$', '"', '\''])
            .trim_end_matches(['.', ',', ';', ':', '!', '?', ')', '"', '\'']);
        (!trimmed.is_empty()).then(|| trimmed.to_string())
    }
}
