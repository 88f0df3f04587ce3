//! Per-run event records.
//!
//! A decode appends one [`TraceEvent`] per phase per step. Serialised one
//! object per line, the stream is enough to replay every decision and to plot
//! deficit trajectories.

use serde::{Deserialize, Serialize};

use super::beam::{Candidate, PruneRecord};
use crate::process::AdaptiveThreshold;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub path_id: u64,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedPath {
    pub path_id: u64,
    pub parent_path_id: u64,
    pub candidate: usize,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathAnswer {
    pub path_id: u64,
    pub answer: Option<String>,
    /// Realised step advantages `F_t - F_{t-1}` along the path.
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopReason {
    /// Best drift fell to `epsilon_stop` or below.
    Converged { max_drift: f64 },
    /// Largest answer cluster reached the consensus fraction.
    Consensus { fraction: f64 },
    HardCap,
    TokenBudget { tokens: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Expand {
        step: u32,
        attempts: u32,
        candidates: Vec<Candidate>,
        tokens_generated: u64,
    },
    Score {
        step: u32,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        baselines: Vec<Baseline>,
        drifts: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alignments: Option<Vec<f64>>,
        /// Values the selection softmax was taken over.
        scores: Vec<f64>,
    },
    Select {
        step: u32,
        weights: Vec<f64>,
        chosen: Vec<usize>,
        paths: Vec<SelectedPath>,
    },
    Prune {
        step: u32,
        threshold: Option<AdaptiveThreshold>,
        records: Vec<PruneRecord>,
        active: Vec<u64>,
    },
    Stop {
        step: u32,
        reason: StopReason,
    },
    Finalize {
        answers: Vec<PathAnswer>,
        final_answer: String,
        flagged: bool,
        tokens_generated: u64,
    },
}
