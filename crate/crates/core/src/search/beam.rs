use serde::{Deserialize, Serialize};

use crate::model::FinishReason;
use crate::process::{AdaptiveThreshold, DoobEstimate, QualityTrajectory};

/// One live (or just-pruned) reasoning path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub id: u64,
    pub parent: Option<u64>,
    /// Prompt plus every accepted step.
    pub prefix: String,
    pub trajectory: QualityTrajectory,
    pub active: bool,
}

/// The stopping event of one path: its deficit crossed the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneRecord {
    pub path_id: u64,
    pub step_index: u32,
    pub deficit_value: f64,
    pub threshold: AdaptiveThreshold,
}

#[derive(Debug, Clone)]
pub struct BeamState {
    prompt_len: usize,
    pub paths: Vec<PathState>,
    /// Number of completed expansions.
    pub step_index: u32,
    pub prune_log: Vec<PruneRecord>,
    pub stopped: bool,
    /// Every token any backend call emitted, rollouts included.
    pub tokens_generated: u64,
    /// The share of `tokens_generated` spent on foresight rollouts.
    pub rollout_tokens: u64,
    next_id: u64,
}

impl BeamState {
    pub fn new(prompt: &str) -> Self {
        Self {
            prompt_len: prompt.len(),
            paths: vec![PathState {
                id: 0,
                parent: None,
                prefix: prompt.to_string(),
                trajectory: QualityTrajectory::new(0),
                active: true,
            }],
            step_index: 0,
            prune_log: Vec::new(),
            stopped: false,
            tokens_generated: 0,
            rollout_tokens: 0,
            next_id: 1,
        }
    }

    pub fn active_paths(&self) -> impl Iterator<Item = &PathState> {
        self.paths.iter().filter(|p| p.active)
    }

    pub fn active_count(&self) -> usize {
        self.active_paths().count()
    }

    pub fn path(&self, id: u64) -> Option<&PathState> {
        self.paths.iter().find(|p| p.id == id)
    }

    pub(crate) fn path_mut(&mut self, id: u64) -> Option<&mut PathState> {
        self.paths.iter_mut().find(|p| p.id == id)
    }

    /// Text the model produced for `path`, without the prompt.
    pub fn generated_text<'a>(&self, path: &'a PathState) -> &'a str {
        &path.prefix[self.prompt_len..]
    }

    pub(crate) fn allocate_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }
}

/// A proposed next step for one path, with the foresight rollouts taken
/// after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub parent_path_id: u64,
    /// Ordinal among the parent's candidates in this expansion.
    pub index: usize,
    pub step_text: String,
    pub step_tokens: u64,
    pub step_finish: FinishReason,
    /// One entry per rollout that produced tokens. May be shorter than
    /// requested if the backend returned empty continuations.
    pub rollout_qualities: Vec<f64>,
    pub rollout_texts: Vec<String>,
    pub rollout_tokens: u64,
    /// Set when every rollout came back empty and the step's own quality was
    /// used instead.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub step_quality_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub candidate: Candidate,
    pub estimate: DoobEstimate,
}

impl ScoredCandidate {
    pub fn drift(&self) -> f64 {
        self.estimate.drift
    }
}
