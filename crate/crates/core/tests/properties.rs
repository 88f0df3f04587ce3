use mfs_core::config::{BackendConfig, RunConfig};
use mfs_core::metrics::flops;
use mfs_core::process::{adaptive_threshold, estimate_predictable_advantage, should_prune, QualityTrajectory};
use mfs_core::search::{
    majority_vote, normalize_answer, prune_beam, select_beam, softmax, BeamState, Candidate, PathState,
    ScoredCandidate,
};
use mfs_core::model::FinishReason;
use mfs_core::{DecodeConfig, Method};
use proptest::prelude::*;

fn qualities() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..0.0, 1..12)
}

fn beam_with(qualities: &[f64]) -> BeamState {
    let mut beam = BeamState::new("q:");
    beam.step_index = 1;
    beam.paths = qualities
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let id = i as u64 + 1;
            let mut trajectory = QualityTrajectory::new(id);
            trajectory.push(0, q).unwrap();
            PathState { id, parent: Some(0), prefix: format!("q:{i}"), trajectory, active: true }
        })
        .collect();
    beam
}

fn scored(n: usize) -> Vec<ScoredCandidate> {
    (0..n)
        .map(|i| ScoredCandidate {
            candidate: Candidate {
                parent_path_id: 1,
                index: i,
                step_text: format!(" s{i}\n"),
                step_tokens: 1,
                step_finish: FinishReason::Delimiter,
                rollout_qualities: vec![-1.0],
                rollout_texts: vec![String::new()],
                rollout_tokens: 1,
                step_quality_fallback: false,
            },
            estimate: estimate_predictable_advantage(-1.0, &[-1.0]).unwrap(),
        })
        .collect()
}

proptest! {
    #[test]
    fn threshold_is_shift_equivariant(xs in qualities(), c in -10.0f64..10.0, lambda in 0.0f64..3.0) {
        let a = adaptive_threshold(&xs, lambda).unwrap();
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let b = adaptive_threshold(&shifted, lambda).unwrap();
        prop_assert!((b.value - a.value - c).abs() < 1e-9);
        prop_assert!((b.sigma - a.sigma).abs() < 1e-9);
    }

    #[test]
    fn threshold_grows_with_lambda(xs in qualities(), l1 in 0.0f64..3.0, dl in 0.0f64..3.0) {
        let lo = adaptive_threshold(&xs, l1).unwrap();
        let hi = adaptive_threshold(&xs, l1 + dl).unwrap();
        prop_assert!(hi.value >= lo.value);
        for &x in &xs {
            if should_prune(x, &hi).unwrap() {
                prop_assert!(should_prune(x, &lo).unwrap());
            }
        }
    }

    #[test]
    fn drift_is_mean_minus_parent(prev in -5.0f64..0.0, xs in qualities()) {
        let e = estimate_predictable_advantage(prev, &xs).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        prop_assert!((e.drift - (mean - prev)).abs() < 1e-12);
        prop_assert!(e.residual_std >= 0.0);
        prop_assert_eq!(e.sample_count, xs.len());
    }

    #[test]
    fn pruning_keeps_the_leader_and_respects_the_threshold(xs in qualities(), lambda in 0.0f64..3.0) {
        let mut beam = beam_with(&xs);
        let cfg = DecodeConfig { lambda1: lambda, ..DecodeConfig::default() };
        let out = prune_beam(&mut beam, &cfg).unwrap();
        let best = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(beam.active_count() >= 1);
        prop_assert_eq!(beam.active_count() + out.records.len(), xs.len());
        for p in beam.paths.iter().filter(|p| p.trajectory.latest_quality() == Some(best)) {
            prop_assert!(p.active);
        }
        for r in &out.records {
            prop_assert!(r.deficit_value >= r.threshold.value);
        }
    }

    #[test]
    fn softmax_is_a_distribution(xs in prop::collection::vec(-50.0f64..50.0, 1..20), tau in 0.05f64..5.0) {
        let w = softmax(&xs, tau).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for i in 0..xs.len() {
            for j in 0..xs.len() {
                if xs[i] < xs[j] {
                    prop_assert!(w[i] <= w[j]);
                }
            }
        }
    }

    #[test]
    fn selection_draws_distinct_sorted_candidates(
        weights in prop::collection::vec(0.0f64..1.0, 1..16),
        m in 1usize..10,
        seed in any::<u64>(),
    ) {
        prop_assume!(weights.iter().any(|&w| w > 0.0));
        let mut beam = beam_with(&[-1.0]);
        let s = scored(weights.len());
        let cfg = DecodeConfig { beam_size: m, seed, ..DecodeConfig::default() };
        let sel = select_beam(&mut beam, &s, &weights, &cfg).unwrap();
        let positive = weights.iter().filter(|&&w| w > 0.0).count();
        prop_assert_eq!(sel.chosen.len(), m.min(positive));
        prop_assert!(sel.chosen.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(sel.chosen.iter().all(|&i| weights[i] > 0.0));
    }

    #[test]
    fn normalisation_is_idempotent(raw in "[ a-zA-Z0-9.,$()+-]{0,12}") {
        let once = normalize_answer(&raw);
        prop_assert_eq!(normalize_answer(&once), once);
    }

    #[test]
    fn majority_vote_picks_a_largest_group(answers in prop::collection::vec(prop::option::of("[1-4]"), 0..12)) {
        let keys: Vec<Option<String>> = answers.iter().map(|a| a.as_deref().map(normalize_answer)).collect();
        let count = |k: &str| keys.iter().filter(|x| x.as_deref() == Some(k)).count();
        match majority_vote(&answers) {
            None => prop_assert!(keys.iter().all(Option::is_none)),
            Some(i) => {
                let winner = keys[i].as_deref().unwrap();
                let top = keys.iter().flatten().map(|k| count(k)).max().unwrap();
                prop_assert_eq!(count(winner), top);
            }
        }
    }

    #[test]
    fn flops_are_exact(n in any::<u64>(), p in any::<u64>()) {
        let expected = 6u128.checked_mul(n as u128).and_then(|x| x.checked_mul(p as u128)).unwrap_or(u128::MAX);
        prop_assert_eq!(flops(n, p), expected);
    }

    #[test]
    fn run_configs_round_trip_through_toml(
        lambda in 0.0f64..3.0,
        beam in 1usize..16,
        n in 1usize..16,
        eps in 0.0f64..0.1,
        seed in 0..=i64::MAX as u64,
        workers in 1usize..9,
    ) {
        let mut config = RunConfig::new(Method::Mfs, BackendConfig::Synthetic);
        config.workers = workers;
        config.decode = DecodeConfig {
            lambda1: lambda,
            beam_size: beam,
            rollouts_per_candidate: n.max(beam),
            epsilon_stop: eps,
            seed,
            ..DecodeConfig::default()
        };
        let text = config.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        let mut wide = config.clone();
        wide.decode.seed = u64::MAX;
        prop_assert!(wide.to_toml().is_err());
        prop_assert_eq!(&back, &config);
        prop_assert_eq!(back.to_toml().unwrap(), text);
    }
}
