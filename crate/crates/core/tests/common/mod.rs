//! Scripted fixture worlds shared by the integration tests.
//!
//! A [`ScriptWorld`] is a pure function of `(call kind, prefix, ordinal)`, so
//! recording it through `RecordingModel` yields a script that replays every
//! decode exactly. Logprobs are dyadic rationals; means of them are exact.
#![allow(dead_code)]

use std::fs;
use std::path::PathBuf;

use mfs_core::model::{
    Capabilities, FinishReason, ModelError, RecordingModel, ScriptedModel, SequenceModel, StepOptions, StepSample,
    Substream,
};
use mfs_core::search::{DecodeConfig, DecodeResult};
use mfs_core::{ar_cot_decode, decode, phi_decode, PhiConfig};
use serde::{Deserialize, Serialize};

pub const FIXTURE_COUNT: usize = 10;
const ROLLOUT_TOKENS: usize = 4;
const COMPLETION_TOKENS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptWorld {
    pub seed: u64,
    /// Step count from which every rollout scores exactly -0.5.
    pub plateau: Option<u32>,
    /// Step count from which every rollout names the gold answer. Earlier
    /// rollouts name scattered guesses.
    pub consensus: u32,
    pub gold: String,
}

fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl ScriptWorld {
    fn mix(&self, prefix: &str, ordinal: u32, salt: u64) -> u64 {
        mfs_core::seed::derive(self.seed, &[fnv1a(prefix), ordinal as u64, salt])
    }

    fn steps(prefix: &str) -> u32 {
        prefix.matches('\n').count() as u32
    }

    fn answer(&self, prefix: &str, h: u64) -> String {
        if Self::steps(prefix) >= self.consensus {
            self.gold.clone()
        } else {
            (100 + h % 900).to_string()
        }
    }

    fn rollout_logprob(&self, prefix: &str, h: u64) -> f64 {
        let t = Self::steps(prefix);
        match self.plateau {
            Some(p) if t >= p => -0.5,
            Some(_) => -2.0 + 0.25 * t as f64 + ((h % 8) as f64 / 16.0 - 0.25),
            None => -3.0 + 0.25 * t as f64 + ((h % 8) as f64 / 16.0 - 0.25),
        }
    }
}

impl SequenceModel for ScriptWorld {
    fn capabilities(&self) -> Capabilities {
        Capabilities { supports_logprobs: true, max_context: usize::MAX }
    }

    fn propose_step(&self, prefix: &str, stream: Substream, options: &StepOptions) -> Result<StepSample, ModelError> {
        let h = self.mix(prefix, stream.ordinal, 1);
        let t = Self::steps(prefix);
        Ok(StepSample {
            text: format!(" step {t} takes route {}{}", h % 10_007, options.delimiter),
            token_logprobs: vec![-((1 + h % 4) as f64) / 8.0, -0.25],
            finish_reason: FinishReason::Delimiter,
        })
    }

    fn rollout(&self, prefix: &str, _depth: u32, stream: Substream) -> Result<StepSample, ModelError> {
        let h = self.mix(prefix, stream.ordinal, 2);
        Ok(StepSample {
            text: format!(" so the answer is {}", self.answer(prefix, h)),
            token_logprobs: vec![self.rollout_logprob(prefix, h); ROLLOUT_TOKENS],
            finish_reason: FinishReason::Length,
        })
    }

    fn complete(&self, prefix: &str, _max_tokens: u32, stream: Substream) -> Result<StepSample, ModelError> {
        let h = self.mix(prefix, stream.ordinal, 3);
        Ok(StepSample {
            text: format!(" therefore the answer is {}", self.answer(prefix, h)),
            token_logprobs: vec![-0.5; COMPLETION_TOKENS],
            finish_reason: FinishReason::EndOfSequence,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureMeta {
    pub id: String,
    pub prompt: String,
    pub answer: String,
    /// Whether rollout quality plateaus, so the convergence stop can fire.
    pub convergent: bool,
    pub world: ScriptWorld,
    pub decode: DecodeConfig,
    pub phi: PhiConfig,
}

impl FixtureMeta {
    pub fn no_stop(&self) -> DecodeConfig {
        DecodeConfig { epsilon_stop: f64::NEG_INFINITY, ..self.decode.clone() }
    }
}

/// Fixtures 0-5 plateau at step 2, 3 or 4; fixtures 6-9 keep improving.
pub fn fixture_meta(i: usize) -> FixtureMeta {
    let convergent = i < 6;
    let plateau = convergent.then_some(2 + (i % 3) as u32);
    let consensus = plateau.unwrap_or(2) + 3;
    FixtureMeta {
        id: format!("fixture-{i:02}"),
        prompt: format!("Problem {i}: find the hidden number."),
        answer: "42".into(),
        convergent,
        world: ScriptWorld { seed: 1000 + i as u64, plateau, consensus, gold: "42".into() },
        decode: DecodeConfig {
            beam_size: 4,
            rollouts_per_candidate: 4,
            max_steps: 8,
            rollout_depth: ROLLOUT_TOKENS as u32,
            max_step_tokens: 16,
            completion_max_tokens: 16,
            seed: i as u64,
            ..DecodeConfig::default()
        },
        phi: PhiConfig::default(),
    }
}

pub fn fixture_dir(i: usize) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("tests/fixtures/scripted/{i:02}"))
}

pub fn to_golden(result: &DecodeResult) -> String {
    let mut s = serde_json::to_string_pretty(result).expect("results serialise");
    s.push('\n');
    s
}

pub struct Replays {
    pub mfs: DecodeResult,
    pub mfs_no_stop: DecodeResult,
    pub phi: DecodeResult,
    pub ar: DecodeResult,
}

pub fn run_all<M: SequenceModel>(meta: &FixtureMeta, model: &M) -> Result<Replays, String> {
    let e = |e: mfs_core::search::DecodeError| e.to_string();
    Ok(Replays {
        mfs: decode(model, &meta.prompt, &meta.decode).map_err(e)?,
        mfs_no_stop: decode(model, &meta.prompt, &meta.no_stop()).map_err(e)?,
        phi: phi_decode(model, &meta.prompt, &meta.decode, &meta.phi).map_err(e)?,
        ar: ar_cot_decode(model, &meta.prompt, &meta.decode).map_err(e)?,
    })
}

/// Records fixture `i` from its world and writes its fixture files.
pub fn bless(i: usize) {
    let meta = fixture_meta(i);
    let recorder = RecordingModel::new(meta.world.clone());
    let runs = run_all(&meta, &recorder).expect("world decodes");
    let dir = fixture_dir(i);
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta).unwrap() + "\n").unwrap();
    let mut script = Vec::new();
    recorder.write_script(&mut script).unwrap();
    fs::write(dir.join("script.jsonl"), script).unwrap();
    fs::write(dir.join("golden_mfs.json"), to_golden(&runs.mfs)).unwrap();
    fs::write(dir.join("golden_phi.json"), to_golden(&runs.phi)).unwrap();
    fs::write(dir.join("golden_ar.json"), to_golden(&runs.ar)).unwrap();
}

pub struct Fixture {
    pub meta: FixtureMeta,
    pub model: ScriptedModel,
    pub golden_mfs: String,
    pub golden_phi: String,
    pub golden_ar: String,
}

pub fn load_fixture(i: usize) -> Result<Fixture, String> {
    let dir = fixture_dir(i);
    let read = |name: &str| fs::read_to_string(dir.join(name)).map_err(|e| format!("{}/{name}: {e}", dir.display()));
    let meta: FixtureMeta = serde_json::from_str(&read("meta.json")?).map_err(|e| e.to_string())?;
    let model = ScriptedModel::load(&dir.join("script.jsonl")).map_err(|e| e.to_string())?;
    Ok(Fixture {
        meta,
        model,
        golden_mfs: read("golden_mfs.json")?,
        golden_phi: read("golden_phi.json")?,
        golden_ar: read("golden_ar.json")?,
    })
}

pub fn blessing() -> bool {
    std::env::var("MFS_BLESS").is_ok_and(|v| v == "1")
}
