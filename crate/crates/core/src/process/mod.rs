//! Quality-process data model and the pure estimators the decoder needs.
//!
//! A reasoning path's quality `F_t` is the mean per-token natural-log
//! probability of a foresight rollout taken after step `t`. The sequence of
//! those values is the path's [`QualityTrajectory`]. Everything in this module
//! is a pure function of its inputs: reductions run left to right in input
//! order, so a given input always produces the same bits.

mod stats;

pub use stats::{mean, population_std, population_variance};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProcessError {
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
    #[error("non-finite {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },
}

pub type Result<T> = std::result::Result<T, ProcessError>;

pub(crate) fn check_finite(what: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(ProcessError::NonFinite { what, value })
    }
}

fn check_all_finite(what: &'static str, values: &[f64]) -> Result<()> {
    values.iter().try_for_each(|&v| check_finite(what, v).map(drop))
}

/// One observation of the quality process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityPoint {
    pub step_index: u32,
    pub quality: f64,
}

/// The quality process of a single reasoning path.
///
/// Points are append-only and contiguous in `step_index` from the first
/// recorded index, so the value at step `t` only ever reflects what was known
/// at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityTrajectory {
    path_id: u64,
    points: Vec<QualityPoint>,
}

impl QualityTrajectory {
    pub fn new(path_id: u64) -> Self {
        Self { path_id, points: Vec::new() }
    }

    /// Copies `parent`'s history under a new identifier.
    pub fn branch(parent: &QualityTrajectory, path_id: u64) -> Self {
        Self { path_id, points: parent.points.clone() }
    }

    pub fn path_id(&self) -> u64 {
        self.path_id
    }

    pub fn points(&self) -> &[QualityPoint] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn latest(&self) -> Option<QualityPoint> {
        self.points.last().copied()
    }

    pub fn latest_quality(&self) -> Option<f64> {
        self.latest().map(|p| p.quality)
    }

    /// Step index the next appended point must carry.
    pub fn next_step_index(&self) -> Option<u32> {
        self.latest().map(|p| p.step_index + 1)
    }

    /// Appends `quality` at `step_index`.
    ///
    /// The first point may start at any index; later points must follow the
    /// previous index by exactly one.
    pub fn push(&mut self, step_index: u32, quality: f64) -> Result<()> {
        check_finite("quality", quality)?;
        if let Some(expected) = self.next_step_index() {
            if step_index != expected {
                return Err(ProcessError::Precondition(
                    "trajectory step indices must be contiguous and increasing",
                ));
            }
        }
        self.points.push(QualityPoint { step_index, quality });
        Ok(())
    }

    /// Successive differences `F_t - F_{t-1}`, i.e. the realised advantages.
    pub fn increments(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| w[1].quality - w[0].quality).collect()
    }
}

/// Monte-Carlo estimate of the predictable-advantage increment of a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoobEstimate {
    /// Mean rollout quality minus the parent's current quality.
    pub drift: f64,
    /// Population standard deviation of the rollout qualities.
    pub residual_std: f64,
    pub sample_count: usize,
}

/// Estimates the one-step drift of the quality process from foresight rollouts.
///
/// `drift = mean(rollout_qualities) - previous_quality`; the dispersion of the
/// rollouts around their mean is reported as the martingale part.
pub fn estimate_predictable_advantage(
    previous_quality: f64,
    rollout_qualities: &[f64],
) -> Result<DoobEstimate> {
    if rollout_qualities.is_empty() {
        return Err(ProcessError::Precondition("rollout set is empty"));
    }
    check_finite("previous quality", previous_quality)?;
    check_all_finite("rollout quality", rollout_qualities)?;
    let m = mean(rollout_qualities);
    Ok(DoobEstimate {
        drift: m - previous_quality,
        residual_std: population_std(rollout_qualities),
        sample_count: rollout_qualities.len(),
    })
}

/// Gap `D_t = F_best - F_path` between the leading path and `path_quality`.
pub fn deficit(best_quality: f64, path_quality: f64) -> Result<f64> {
    check_finite("best quality", best_quality)?;
    check_finite("path quality", path_quality)?;
    Ok(best_quality - path_quality)
}

/// `mu + lambda1 * sigma` over one step's scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveThreshold {
    pub mu: f64,
    pub sigma: f64,
    pub lambda1: f64,
    pub value: f64,
}

/// Builds the pruning threshold from the contemporaneous score distribution.
pub fn adaptive_threshold(scores: &[f64], lambda1: f64) -> Result<AdaptiveThreshold> {
    if scores.is_empty() {
        return Err(ProcessError::Precondition("score set is empty"));
    }
    check_all_finite("score", scores)?;
    check_finite("lambda1", lambda1)?;
    if lambda1 < 0.0 {
        return Err(ProcessError::Precondition("lambda1 must be non-negative"));
    }
    let mu = mean(scores);
    let sigma = population_std(scores);
    Ok(AdaptiveThreshold { mu, sigma, lambda1, value: mu + lambda1 * sigma })
}

/// The stopping event `D_t >= c_prune(t)`; the boundary counts as a hit.
pub fn should_prune(deficit_value: f64, threshold: &AdaptiveThreshold) -> Result<bool> {
    check_finite("deficit", deficit_value)?;
    Ok(deficit_value >= threshold.value)
}

/// True once even the best candidate's drift is at most `epsilon_stop`.
pub fn has_converged(max_advantage: f64, epsilon_stop: f64) -> Result<bool> {
    check_finite("max advantage", max_advantage)?;
    check_finite("epsilon_stop", epsilon_stop)?;
    if epsilon_stop < 0.0 {
        return Err(ProcessError::Precondition("epsilon_stop must be non-negative"));
    }
    Ok(max_advantage <= epsilon_stop)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub mean_advantage: f64,
    pub variance: f64,
    pub trajectory_count: usize,
}

impl std::fmt::Display for TrajectoryStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({:.3}, {:.3})", self.mean_advantage, self.variance)
    }
}

/// Pooled mean and population variance of per-step advantages across paths.
pub fn trajectory_statistics<S: AsRef<[f64]>>(advantage_sequences: &[S]) -> Result<TrajectoryStats> {
    if advantage_sequences.is_empty() {
        return Err(ProcessError::Precondition("no trajectories supplied"));
    }
    let mut pooled = Vec::new();
    for seq in advantage_sequences {
        let seq = seq.as_ref();
        if seq.is_empty() {
            return Err(ProcessError::Precondition("advantage sequence is empty"));
        }
        check_all_finite("advantage", seq)?;
        pooled.extend_from_slice(seq);
    }
    Ok(TrajectoryStats {
        mean_advantage: mean(&pooled),
        variance: population_variance(&pooled),
        trajectory_count: advantage_sequences.len(),
    })
}
