//! Replay backend for golden tests, plus a recorder that produces its scripts.
//!
//! A script is line-delimited JSON. Each line holds one response:
//!
//! ```json
//! {"prefix_hash":"<sha256 hex of prefix>","kind":"rollout","ordinal":0,
//!  "text":" so 4","logprobs":[-0.5,-0.25],"finish_reason":"length"}
//! ```
//!
//! `kind` defaults to `step` and `ordinal` to `0`. A call looks up all lines
//! with its `(kind, prefix_hash)` and takes the one whose ordinal equals the
//! call's ordinal, falling back to `ordinal % count` over the lines in
//! ordinal order.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;

use super::{Capabilities, FinishReason, ModelError, SequenceModel, StepOptions, StepSample, Substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    #[default]
    Step,
    Rollout,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub prefix_hash: String,
    #[serde(default)]
    pub kind: CallKind,
    #[serde(default)]
    pub ordinal: u32,
    pub text: String,
    pub logprobs: Vec<f64>,
    pub finish_reason: FinishReason,
}

impl ScriptEntry {
    fn sample(&self) -> StepSample {
        StepSample {
            text: self.text.clone(),
            token_logprobs: self.logprobs.clone(),
            finish_reason: self.finish_reason,
        }
    }
}

pub fn prefix_hash(prefix: &str) -> String {
    hex::encode(Sha256::digest(prefix.as_bytes()))
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedModel {
    entries: HashMap<(CallKind, String), Vec<ScriptEntry>>,
}

impl ScriptedModel {
    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut map: HashMap<(CallKind, String), Vec<ScriptEntry>> = HashMap::new();
        for e in entries {
            map.entry((e.kind, e.prefix_hash.clone())).or_default().push(e);
        }
        for list in map.values_mut() {
            list.sort_by_key(|e| e.ordinal);
        }
        Self { entries: map }
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, ModelError> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(&line)
                .map_err(|e| ModelError::Config(format!("script line {}: {e}", i + 1)))?;
            entries.push(entry);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup(&self, kind: CallKind, prefix: &str, ordinal: u32) -> Result<StepSample, ModelError> {
        let hash = prefix_hash(prefix);
        let list = self
            .entries
            .get(&(kind, hash.clone()))
            .ok_or(ModelError::MissingScript { kind, prefix_hash: hash })?;
        let entry = list
            .iter()
            .find(|e| e.ordinal == ordinal)
            .unwrap_or(&list[ordinal as usize % list.len()]);
        Ok(entry.sample())
    }
}

impl SequenceModel for ScriptedModel {
    fn capabilities(&self) -> Capabilities {
        Capabilities { supports_logprobs: true, max_context: usize::MAX }
    }

    fn propose_step(&self, prefix: &str, stream: Substream, _options: &StepOptions) -> Result<StepSample, ModelError> {
        self.lookup(CallKind::Step, prefix, stream.ordinal)
    }

    fn rollout(&self, prefix: &str, _depth: u32, stream: Substream) -> Result<StepSample, ModelError> {
        self.lookup(CallKind::Rollout, prefix, stream.ordinal)
    }

    fn complete(&self, prefix: &str, _max_tokens: u32, stream: Substream) -> Result<StepSample, ModelError> {
        self.lookup(CallKind::Complete, prefix, stream.ordinal)
    }
}

type RecordKey = (CallKind, String, u32);

/// Wraps a backend and records every response it gives as a script entry.
///
/// Only meaningful for inner models whose output depends on nothing but
/// `(kind, prefix, ordinal)`; the first response seen for a key wins.
pub struct RecordingModel<M> {
    inner: M,
    log: Mutex<BTreeMap<RecordKey, ScriptEntry>>,
}

impl<M: SequenceModel> RecordingModel<M> {
    pub fn new(inner: M) -> Self {
        Self { inner, log: Mutex::new(BTreeMap::new()) }
    }

    fn record(&self, kind: CallKind, prefix: &str, ordinal: u32, sample: &StepSample) {
        let hash = prefix_hash(prefix);
        let mut log = self.log.lock().expect("recorder lock poisoned");
        log.entry((kind, hash.clone(), ordinal)).or_insert_with(|| ScriptEntry {
            prefix_hash: hash,
            kind,
            ordinal,
            text: sample.text.clone(),
            logprobs: sample.token_logprobs.clone(),
            finish_reason: sample.finish_reason,
        });
    }

    /// Recorded entries sorted by `(kind, prefix_hash, ordinal)`.
    pub fn entries(&self) -> Vec<ScriptEntry> {
        self.log.lock().expect("recorder lock poisoned").values().cloned().collect()
    }

    pub fn write_script<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for entry in self.entries() {
            serde_json::to_writer(&mut out, &entry)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl<M: SequenceModel> SequenceModel for RecordingModel<M> {
    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    fn propose_step(&self, prefix: &str, stream: Substream, options: &StepOptions) -> Result<StepSample, ModelError> {
        let s = self.inner.propose_step(prefix, stream, options)?;
        self.record(CallKind::Step, prefix, stream.ordinal, &s);
        Ok(s)
    }

    fn rollout(&self, prefix: &str, depth: u32, stream: Substream) -> Result<StepSample, ModelError> {
        let s = self.inner.rollout(prefix, depth, stream)?;
        self.record(CallKind::Rollout, prefix, stream.ordinal, &s);
        Ok(s)
    }

    fn complete(&self, prefix: &str, max_tokens: u32, stream: Substream) -> Result<StepSample, ModelError> {
        let s = self.inner.complete(prefix, max_tokens, stream)?;
        self.record(CallKind::Complete, prefix, stream.ordinal, &s);
        Ok(s)
    }
}
