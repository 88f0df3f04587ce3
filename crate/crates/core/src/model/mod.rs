//! The sequence-model interface the decoders run against.
//!
//! Three backends implement [`SequenceModel`]:
//!
//! * [`SyntheticModel`]: a drift-process generator with known arm qualities,
//!   used as a verification oracle;
//! * [`ScriptedModel`]: replays recorded responses keyed by prefix hash;
//! * [`HttpModel`]: an OpenAI-compatible `/v1/completions` client.
//!
//! Tokenisation belongs to the backend. The engine only ever sees text and
//! the backend's per-token log-probabilities.

mod http;
mod scripted;
mod synthetic;

pub use http::{HttpConfig, HttpModel};
pub use scripted::{prefix_hash, CallKind, RecordingModel, ScriptEntry, ScriptedModel};
pub use synthetic::{SyntheticModel, SyntheticTask, SYNTHETIC_ANSWER_PATTERN};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("prefix of {len} bytes exceeds context limit of {limit} bytes")]
    Capacity { len: usize, limit: usize },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("script has no entry for {kind:?} call on prefix {prefix_hash}")]
    MissingScript { kind: CallKind, prefix_hash: String },
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ModelError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ModelError::Transport { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Delimiter,
    Length,
    EndOfSequence,
}

/// A continuation with one natural-log probability per emitted token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSample {
    pub text: String,
    pub token_logprobs: Vec<f64>,
    pub finish_reason: FinishReason,
}

impl StepSample {
    pub fn token_count(&self) -> u64 {
        self.token_logprobs.len() as u64
    }
}

/// Mean per-token log-probability of `sample`.
pub fn quality_of(sample: &StepSample) -> Result<f64, ModelError> {
    if sample.token_logprobs.is_empty() {
        return Err(ModelError::Precondition("sample has no token log-probabilities"));
    }
    if sample.token_logprobs.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Protocol("non-finite token log-probability".into()));
    }
    Ok(crate::process::mean(&sample.token_logprobs))
}

/// Random substream handed to a single backend call.
///
/// `seed` feeds generators; `ordinal` is the call's index among sibling calls
/// on the same prefix and is what replay backends key on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Substream {
    pub seed: u64,
    pub ordinal: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub supports_logprobs: bool,
    /// Longest accepted prefix, in bytes.
    pub max_context: usize,
}

/// Limits for a single reasoning-step proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOptions {
    pub delimiter: String,
    pub max_tokens: u32,
}

pub trait SequenceModel: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    /// Samples one reasoning step after `prefix`, ending at the delimiter or
    /// the token cap.
    fn propose_step(
        &self,
        prefix: &str,
        stream: Substream,
        options: &StepOptions,
    ) -> Result<StepSample, ModelError>;

    /// Samples a foresight continuation of at most `depth` tokens.
    fn rollout(&self, prefix: &str, depth: u32, stream: Substream) -> Result<StepSample, ModelError>;

    /// Plain autoregressive completion up to `max_tokens`.
    fn complete(&self, prefix: &str, max_tokens: u32, stream: Substream) -> Result<StepSample, ModelError>;

    /// False once the backend has done anything that a replay could not
    /// reproduce.
    fn replayable(&self) -> bool {
        true
    }
}

impl<M: SequenceModel + ?Sized> SequenceModel for &M {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn propose_step(&self, prefix: &str, stream: Substream, options: &StepOptions) -> Result<StepSample, ModelError> {
        (**self).propose_step(prefix, stream, options)
    }
    fn rollout(&self, prefix: &str, depth: u32, stream: Substream) -> Result<StepSample, ModelError> {
        (**self).rollout(prefix, depth, stream)
    }
    fn complete(&self, prefix: &str, max_tokens: u32, stream: Substream) -> Result<StepSample, ModelError> {
        (**self).complete(prefix, max_tokens, stream)
    }
    fn replayable(&self) -> bool {
        (**self).replayable()
    }
}

impl<M: SequenceModel + ?Sized> SequenceModel for std::sync::Arc<M> {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn propose_step(&self, prefix: &str, stream: Substream, options: &StepOptions) -> Result<StepSample, ModelError> {
        (**self).propose_step(prefix, stream, options)
    }
    fn rollout(&self, prefix: &str, depth: u32, stream: Substream) -> Result<StepSample, ModelError> {
        (**self).rollout(prefix, depth, stream)
    }
    fn complete(&self, prefix: &str, max_tokens: u32, stream: Substream) -> Result<StepSample, ModelError> {
        (**self).complete(prefix, max_tokens, stream)
    }
    fn replayable(&self) -> bool {
        (**self).replayable()
    }
}

pub(crate) fn check_context(prefix: &str, caps: Capabilities) -> Result<(), ModelError> {
    if prefix.len() > caps.max_context {
        Err(ModelError::Capacity { len: prefix.len(), limit: caps.max_context })
    } else {
        Ok(())
    }
}
