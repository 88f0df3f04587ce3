//! Client for OpenAI-compatible text-completion servers (vLLM and friends).
//!
//! Every call is a `POST {base_url}/v1/completions` with echo disabled and
//! per-token log-probabilities requested. The response's
//! `choices[0].logprobs.token_logprobs` must contain exactly
//! `usage.completion_tokens` finite, non-positive values; anything else is a
//! protocol error rather than something to patch up.

use serde::{Deserialize, Serialize};
use serde_json::json;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use super::{check_context, Capabilities, FinishReason, ModelError, SequenceModel, StepOptions, StepSample, Substream};

fn default_temperature() -> f64 {
    0.7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    /// Sampling temperature for step proposals and completions.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Sampling temperature for foresight rollouts.
    #[serde(default = "default_temperature")]
    pub rollout_temperature: f64,
    #[serde(default = "HttpConfig::default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "HttpConfig::default_auth_header")]
    pub auth_header: String,
    /// Value sent in `auth_header`, e.g. `Bearer sk-...`. Usually supplied
    /// through the environment rather than a config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_value: Option<String>,
    #[serde(default)]
    pub accept_invalid_certs: bool,
    #[serde(default = "HttpConfig::default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "HttpConfig::default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "HttpConfig::default_max_in_flight")]
    pub max_in_flight: usize,
    /// Longest prefix sent, in bytes.
    #[serde(default = "HttpConfig::default_max_context")]
    pub max_context: usize,
}

impl HttpConfig {
    fn default_timeout_secs() -> u64 {
        120
    }
    fn default_auth_header() -> String {
        "Authorization".into()
    }
    fn default_max_retries() -> u32 {
        3
    }
    fn default_backoff_ms() -> u64 {
        250
    }
    fn default_max_in_flight() -> usize {
        16
    }
    fn default_max_context() -> usize {
        128 * 1024
    }

    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            temperature: default_temperature(),
            rollout_temperature: default_temperature(),
            timeout_secs: Self::default_timeout_secs(),
            auth_header: Self::default_auth_header(),
            auth_value: None,
            accept_invalid_certs: false,
            max_retries: Self::default_max_retries(),
            backoff_ms: Self::default_backoff_ms(),
            max_in_flight: Self::default_max_in_flight(),
            max_context: Self::default_max_context(),
        }
    }

    fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/v1/completions") {
            base.to_string()
        } else if base.ends_with("/v1") {
            format!("{base}/completions")
        } else {
            format!("{base}/v1/completions")
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    count: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.count.lock().expect("semaphore poisoned");
        while *n >= self.cap {
            n = self.freed.wait(n).expect("semaphore poisoned");
        }
        *n += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.count.lock().expect("semaphore poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpModel {
    config: HttpConfig,
    endpoint: String,
    client: reqwest::blocking::Client,
    in_flight: InFlight,
    retried: AtomicBool,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    logprobs: Option<ChoiceLogprobs>,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    token_logprobs: Vec<Option<f64>>,
}

#[derive(Deserialize)]
struct Usage {
    completion_tokens: u64,
}

enum Attempt {
    Retry(String),
    Fatal(ModelError),
}

impl HttpModel {
    pub fn new(config: HttpConfig) -> Result<Self, ModelError> {
        if config.model.is_empty() {
            return Err(ModelError::Config("model name is empty".into()));
        }
        if config.max_in_flight == 0 {
            return Err(ModelError::Config("max_in_flight must be positive".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .danger_accept_invalid_certs(config.accept_invalid_certs)
            .build()
            .map_err(|e| ModelError::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            endpoint: config.endpoint(),
            in_flight: InFlight { count: Mutex::new(0), freed: Condvar::new(), cap: config.max_in_flight },
            config,
            client,
            retried: AtomicBool::new(false),
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn request(
        &self,
        prefix: &str,
        max_tokens: u32,
        temperature: f64,
        stop: Option<&str>,
        stream: Substream,
    ) -> Result<StepSample, ModelError> {
        check_context(prefix, self.capabilities())?;
        if max_tokens == 0 {
            return Err(ModelError::Precondition("max_tokens must be positive"));
        }
        let stop_list: Vec<&str> = stop.filter(|s| !s.is_empty()).into_iter().collect();
        let body = json!({
            "model": self.config.model,
            "prompt": prefix,
            "max_tokens": max_tokens,
            "temperature": temperature,
            "logprobs": 1,
            "echo": false,
            "stop": stop_list,
            "seed": stream.seed,
        });
        let body = serde_json::to_vec(&body).expect("request body serialises");

        let _slot = self.in_flight.acquire();
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                self.retried.store(true, Ordering::SeqCst);
                let wait = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                log::warn!("retrying completion request (attempt {}) after {wait} ms: {last}", attempt + 1);
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.attempt(&body, !stop_list.is_empty()) {
                Ok(sample) => return Ok(sample),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => last = msg,
            }
        }
        Err(ModelError::Transport { message: last, attempts: self.config.max_retries + 1 })
    }

    fn attempt(&self, body: &[u8], stop_requested: bool) -> Result<StepSample, Attempt> {
        let mut req = self
            .client
            .post(&self.endpoint)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec());
        if let Some(value) = &self.config.auth_value {
            req = req.header(self.config.auth_header.as_str(), value.as_str());
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("server returned {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(ModelError::Protocol(format!(
                "server returned {status}: {}",
                String::from_utf8_lossy(&bytes)
            ))));
        }
        parse_response(&bytes, stop_requested).map_err(Attempt::Fatal)
    }
}

fn parse_response(bytes: &[u8], stop_requested: bool) -> Result<StepSample, ModelError> {
    let proto = |m: String| ModelError::Protocol(m);
    let resp: CompletionResponse =
        serde_json::from_slice(bytes).map_err(|e| proto(format!("malformed completion response: {e}")))?;
    let choice = resp.choices.into_iter().next().ok_or_else(|| proto("response has no choices".into()))?;
    let usage = resp.usage.ok_or_else(|| proto("response has no usage block".into()))?;
    let logprobs = choice.logprobs.ok_or_else(|| proto("response has no logprobs".into()))?;
    let token_logprobs = logprobs
        .token_logprobs
        .into_iter()
        .map(|v| match v {
            Some(x) if x.is_finite() && x <= 0.0 => Ok(x),
            Some(x) => Err(proto(format!("invalid token log-probability {x}"))),
            None => Err(proto("null token log-probability".into())),
        })
        .collect::<Result<Vec<f64>, _>>()?;
    if token_logprobs.len() as u64 != usage.completion_tokens {
        return Err(proto(format!(
            "{} token log-probabilities but usage reports {} completion tokens",
            token_logprobs.len(),
            usage.completion_tokens
        )));
    }
    let finish_reason = match choice.finish_reason.as_deref() {
        Some("length") => FinishReason::Length,
        Some("stop") if stop_requested => FinishReason::Delimiter,
        Some("stop") | Some("eos") | None => FinishReason::EndOfSequence,
        Some(other) => return Err(proto(format!("unknown finish_reason {other:?}"))),
    };
    Ok(StepSample { text: choice.text, token_logprobs, finish_reason })
}

impl SequenceModel for HttpModel {
    fn capabilities(&self) -> Capabilities {
        Capabilities { supports_logprobs: true, max_context: self.config.max_context }
    }

    /// The server strips the stop string from its output, so it is appended
    /// back when the step ended on the delimiter.
    fn propose_step(&self, prefix: &str, stream: Substream, options: &StepOptions) -> Result<StepSample, ModelError> {
        let mut s =
            self.request(prefix, options.max_tokens, self.config.temperature, Some(&options.delimiter), stream)?;
        if s.finish_reason == FinishReason::Delimiter && !s.text.ends_with(&options.delimiter) {
            s.text.push_str(&options.delimiter);
        }
        Ok(s)
    }

    fn rollout(&self, prefix: &str, depth: u32, stream: Substream) -> Result<StepSample, ModelError> {
        self.request(prefix, depth, self.config.rollout_temperature, None, stream)
    }

    fn complete(&self, prefix: &str, max_tokens: u32, stream: Substream) -> Result<StepSample, ModelError> {
        self.request(prefix, max_tokens, self.config.temperature, None, stream)
    }

    /// Server-side sampling is only reproducible when no request had to be
    /// retried.
    fn replayable(&self) -> bool {
        !self.retried.load(Ordering::SeqCst)
    }
}
