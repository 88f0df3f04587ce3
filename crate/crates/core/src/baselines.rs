//! Comparison decoders over the same model interface and beam machinery:
//! φ-decoding (advantage plus clustering alignment, consensus stop) and plain
//! autoregressive chain-of-thought.
//!
//! φ-decoding's clustering metric and its advantage/alignment combination
//! are not pinned down anywhere public. This module clusters candidates by
//! the normalised answer their rollout reaches, falls back to quality
//! proximity for rollouts without an answer, and combines the two scores with
//! a configurable weighted sum.

use serde::{Deserialize, Serialize};

use crate::model::SequenceModel;
use crate::process::{estimate_predictable_advantage, ProcessError};
use crate::search::{
    finish, normalize_answer, run_search, AnswerPattern, BeamState, Candidate, DecodeConfig, DecodeError,
    DecodeResult, Method, ScoredCandidate, Strategy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineMode {
    /// `advantage + alignment`
    Sum,
    /// `(1 - w) * advantage + w * alignment`
    WeightedSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhiConfig {
    /// Consensus fraction that ends the search. Values above 1 disable it.
    pub delta: f64,
    pub combine_mode: CombineMode,
    /// `w` in the weighted sum.
    pub alignment_weight: f64,
    /// Quality distance within which answerless rollouts share a cluster.
    pub cluster_distance: f64,
}

impl Default for PhiConfig {
    fn default() -> Self {
        Self { delta: 0.7, combine_mode: CombineMode::WeightedSum, alignment_weight: 0.5, cluster_distance: 0.05 }
    }
}

impl PhiConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        let bad = |m: &str| Err(DecodeError::InvalidConfig(m.to_string()));
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return bad("phi delta must be finite and non-negative");
        }
        if !self.alignment_weight.is_finite() {
            return bad("phi alignment_weight must be finite");
        }
        if !(self.cluster_distance.is_finite() && self.cluster_distance >= 0.0) {
            return bad("phi cluster_distance must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiScore {
    pub advantage: f64,
    pub alignment: f64,
    pub combined: f64,
}

pub fn combine(advantage: f64, alignment: f64, config: &PhiConfig) -> PhiScore {
    let combined = match config.combine_mode {
        CombineMode::Sum => advantage + alignment,
        CombineMode::WeightedSum => (1.0 - config.alignment_weight) * advantage + config.alignment_weight * alignment,
    };
    PhiScore { advantage, alignment, combined }
}

/// Mean rollout quality minus the parent's quality. Deliberately the very
/// same computation as the Doob drift.
pub fn phi_advantage(parent_quality: f64, rollout_qualities: &[f64]) -> Result<f64, ProcessError> {
    estimate_predictable_advantage(parent_quality, rollout_qualities).map(|e| e.drift)
}

/// Answer reached by the candidate's step and first rollout.
pub fn candidate_answer(candidate: &Candidate, pattern: &AnswerPattern) -> Option<String> {
    let rollout = candidate.rollout_texts.first().map(String::as_str).unwrap_or("");
    pattern.extract(&format!("{}{}", candidate.step_text, rollout))
}

/// Cluster label for each candidate.
///
/// Candidates with an answer share a cluster iff their normalised answers are
/// equal. The rest are clustered greedily in order: each joins the first
/// answerless cluster whose first member's quality is within `distance`, or
/// starts a new one. Labels are dense and numbered by first appearance.
pub fn cluster_labels(answers: &[Option<String>], qualities: &[f64], distance: f64) -> Vec<usize> {
    debug_assert_eq!(answers.len(), qualities.len());
    let mut answer_clusters: Vec<(String, usize)> = Vec::new();
    let mut quality_clusters: Vec<(f64, usize)> = Vec::new();
    let mut next = 0;
    let mut labels = Vec::with_capacity(answers.len());
    for (answer, &q) in answers.iter().zip(qualities) {
        let label = match answer {
            Some(a) => {
                let key = normalize_answer(a);
                match answer_clusters.iter().find(|(k, _)| *k == key) {
                    Some(&(_, l)) => l,
                    None => {
                        answer_clusters.push((key, next));
                        next += 1;
                        next - 1
                    }
                }
            }
            None => match quality_clusters.iter().find(|(anchor, _)| (anchor - q).abs() <= distance) {
                Some(&(_, l)) => l,
                None => {
                    quality_clusters.push((q, next));
                    next += 1;
                    next - 1
                }
            },
        };
        labels.push(label);
    }
    labels
}

fn cluster_sizes(labels: &[usize]) -> Vec<usize> {
    let mut sizes = vec![0; labels.iter().max().map_or(0, |m| m + 1)];
    for &l in labels {
        sizes[l] += 1;
    }
    sizes
}

fn labels_for(candidates: &[Candidate], config: &PhiConfig, pattern: &AnswerPattern) -> Vec<usize> {
    let answers: Vec<Option<String>> = candidates.iter().map(|c| candidate_answer(c, pattern)).collect();
    let qualities: Vec<f64> = candidates
        .iter()
        .map(|c| if c.rollout_qualities.is_empty() { 0.0 } else { crate::process::mean(&c.rollout_qualities) })
        .collect();
    cluster_labels(&answers, &qualities, config.cluster_distance)
}

/// Each candidate's cluster size over the candidate count.
pub fn phi_alignment(candidates: &[Candidate], config: &PhiConfig, pattern: &AnswerPattern) -> Vec<f64> {
    let labels = labels_for(candidates, config, pattern);
    let sizes = cluster_sizes(&labels);
    let n = candidates.len() as f64;
    labels.iter().map(|&l| sizes[l] as f64 / n).collect()
}

/// Fraction of candidates in the largest cluster.
pub fn largest_cluster_fraction(candidates: &[Candidate], config: &PhiConfig, pattern: &AnswerPattern) -> f64 {
    if candidates.is_empty() {
        return 0.0;
    }
    let sizes = cluster_sizes(&labels_for(candidates, config, pattern));
    sizes.into_iter().max().unwrap_or(0) as f64 / candidates.len() as f64
}

/// Consensus stop: the largest cluster holds at least `delta` of the candidates.
pub fn phi_stop(candidates: &[Candidate], config: &PhiConfig, pattern: &AnswerPattern) -> bool {
    !candidates.is_empty() && largest_cluster_fraction(candidates, config, pattern) >= config.delta
}

pub(crate) struct PhiStepScores {
    pub alignments: Vec<f64>,
    pub combined: Vec<f64>,
    pub largest_cluster_fraction: f64,
}

pub(crate) fn phi_step_scores(
    scored: &[ScoredCandidate],
    config: &PhiConfig,
    pattern: &AnswerPattern,
) -> Result<PhiStepScores, DecodeError> {
    let candidates: Vec<Candidate> = scored.iter().map(|s| s.candidate.clone()).collect();
    let alignments = phi_alignment(&candidates, config, pattern);
    let combined = scored
        .iter()
        .zip(&alignments)
        .map(|(s, &a)| combine(s.drift(), a, config).combined)
        .collect();
    Ok(PhiStepScores {
        alignments,
        combined,
        largest_cluster_fraction: largest_cluster_fraction(&candidates, config, pattern),
    })
}

/// φ-decoding: the foresight beam scored by advantage plus alignment,
/// stopped by answer consensus or the step cap. No in-width pruning.
pub fn phi_decode<M: SequenceModel + ?Sized>(
    model: &M,
    prompt: &str,
    config: &DecodeConfig,
    phi: &PhiConfig,
) -> Result<DecodeResult, DecodeError> {
    phi.validate()?;
    run_search(model, prompt, config, Strategy::Phi(phi))
}

/// One autoregressive completion of the prompt, answer extracted.
pub fn ar_cot_decode<M: SequenceModel + ?Sized>(
    model: &M,
    prompt: &str,
    config: &DecodeConfig,
) -> Result<DecodeResult, DecodeError> {
    config.validate()?;
    finish(model, BeamState::new(prompt), config, Method::ArCot, None, Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FinishReason;

    fn cand(index: usize, rollout: &str, quality: f64) -> Candidate {
        Candidate {
            parent_path_id: 0,
            index,
            step_text: String::new(),
            step_tokens: 1,
            step_finish: FinishReason::Delimiter,
            rollout_qualities: vec![quality],
            rollout_texts: vec![rollout.to_string()],
            rollout_tokens: 1,
            step_quality_fallback: false,
        }
    }

    fn pattern() -> AnswerPattern {
        AnswerPattern::new(crate::search::DEFAULT_ANSWER_PATTERN).unwrap()
    }

    #[test]
    fn advantage_examples() {
        assert!((phi_advantage(-1.0, &[-0.8, -0.6, -0.7]).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(phi_advantage(-0.5, &[-0.5, -0.5]).unwrap(), 0.0);
        assert_eq!(phi_advantage(-1.0, &[-0.25]).unwrap(), -0.25 - -1.0);
    }

    #[test]
    fn alignment_examples() {
        let cfg = PhiConfig::default();
        let cs = vec![cand(0, "answer is 4", -1.0), cand(1, "answer is 4", -2.0), cand(2, "answer is 7", -1.0)];
        let a = phi_alignment(&cs, &cfg, &pattern());
        assert_eq!(a, vec![2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(phi_alignment(&cs[..1], &cfg, &pattern()), vec![1.0]);
        let same = vec![cand(0, "answer is 4", 0.0), cand(1, "answer: 4.0", 0.0)];
        assert_eq!(phi_alignment(&same, &cfg, &pattern()), vec![1.0, 1.0]);
    }

    #[test]
    fn answerless_rollouts_cluster_by_quality() {
        let cfg = PhiConfig { cluster_distance: 0.1, ..Default::default() };
        let cs = vec![cand(0, "hmm", -1.0), cand(1, "hmm", -1.05), cand(2, "hmm", -2.0), cand(3, "answer is 1", -1.0)];
        assert_eq!(phi_alignment(&cs, &cfg, &pattern()), vec![0.5, 0.5, 0.25, 0.25]);
    }

    #[test]
    fn consensus_stop_examples() {
        let cs = vec![cand(0, "answer is 4", 0.0), cand(1, "answer is 4", 0.0), cand(2, "answer is 7", 0.0)];
        let at = |delta| PhiConfig { delta, ..Default::default() };
        assert!(phi_stop(&cs, &at(0.6), &pattern()));
        assert!(!phi_stop(&cs, &at(1.0), &pattern()));
        assert!(phi_stop(&cs[..1], &at(1.0), &pattern()));
        assert!(phi_stop(&cs, &at(0.0), &pattern()));
        assert!(!phi_stop(&cs[..1], &at(1.5), &pattern()));
    }

    #[test]
    fn combination_modes() {
        let sum = PhiConfig { combine_mode: CombineMode::Sum, ..Default::default() };
        assert_eq!(combine(0.25, 0.5, &sum).combined, 0.75);
        let weighted = PhiConfig { alignment_weight: 0.25, ..Default::default() };
        assert_eq!(combine(0.5, 1.0, &weighted).combined, 0.75 * 0.5 + 0.25);
    }

    #[test]
    fn invalid_phi_configs() {
        assert!(PhiConfig { delta: -0.1, ..Default::default() }.validate().is_err());
        assert!(PhiConfig { cluster_distance: f64::NAN, ..Default::default() }.validate().is_err());
        PhiConfig { delta: 2.0, ..Default::default() }.validate().unwrap();
    }
}
