//! Run configuration: one TOML file per experiment.
//!
//! ```toml
//! method = "mfs"
//! preset = "llama3.1-8b/gsm8k"   # optional, sets lambda1 unless given below
//!
//! [decode]
//! beam_size = 8
//! seed = 7
//!
//! [backend]
//! kind = "http"
//! base_url = "http://localhost:8000"
//! model = "meta-llama/Llama-3.1-8B-Instruct"
//!
//! [metrics]
//! model_params = 8000000000
//! ```
//!
//! `MFS_ENDPOINT` and `MFS_API_KEY` override the HTTP endpoint and send
//! `Bearer <key>` in the auth header.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::PhiConfig;
use crate::model::HttpConfig;
use crate::search::{DecodeConfig, Method};

pub const ENV_ENDPOINT: &str = "MFS_ENDPOINT";
pub const ENV_API_KEY: &str = "MFS_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Per-model, per-benchmark pruning coefficients. Every preset uses
/// `M = N = 8`.
pub const LAMBDA1_PRESETS: &[(&str, f64)] = &[
    ("llama3.1-8b/gsm8k", 0.8),
    ("llama3.1-8b/math-500", 0.6),
    ("llama3.1-8b/gpqa", 0.6),
    ("llama3.1-8b/reclor", 0.8),
    ("llama3.1-8b/logiqa", 0.6),
    ("llama3.1-8b/arc-c", 0.8),
    ("mistral-v0.3-7b/gsm8k", 0.6),
    ("mistral-v0.3-7b/math-500", 0.8),
    ("mistral-v0.3-7b/gpqa", 0.8),
    ("mistral-v0.3-7b/reclor", 0.6),
    ("mistral-v0.3-7b/logiqa", 1.0),
    ("mistral-v0.3-7b/arc-c", 1.0),
    ("qwen2.5-3b/reclor", 0.8),
    ("qwen2.5-3b/arc-c", 0.8),
];

pub fn preset_lambda1(name: &str) -> Option<f64> {
    LAMBDA1_PRESETS.iter().find(|(n, _)| *n == name).map(|&(_, l)| l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendConfig {
    /// Synthetic arm-bandit tasks; each prompt encodes its own task.
    Synthetic,
    /// Replay of a recorded script.
    Scripted { path: PathBuf },
    /// OpenAI-compatible completions endpoint.
    Http(HttpConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// `P` in `6nP`.
    pub model_params: u64,
    pub count_rollout_tokens: bool,
    /// Column name in reports.
    pub benchmark: String,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { model_params: 8_000_000_000, count_rollout_tokens: true, benchmark: "bench".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    /// `json`, `csv` or `markdown`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    /// JSONL trace of every decode event.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Instances decoded concurrently.
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub decode: DecodeConfig,
    /// Present iff `method = "phi"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<PhiConfig>,
    pub backend: BackendConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn new(method: Method, backend: BackendConfig) -> Self {
        Self {
            method,
            preset: None,
            workers: 1,
            decode: DecodeConfig::default(),
            phi: (method == Method::Phi).then(PhiConfig::default),
            backend,
            metrics: MetricsConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// Parses, applies the preset and validates. Environment overrides are
    /// not applied; see [`RunConfig::apply_env`].
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let lambda1_given = raw.get("decode").and_then(|d| d.get("lambda1")).is_some();
        let mut config: Self = raw.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        if let Some(name) = &config.preset {
            let lambda1 =
                preset_lambda1(name).ok_or_else(|| ConfigError::Invalid(format!("unknown preset {name:?}")))?;
            if !lambda1_given {
                config.decode.lambda1 = lambda1;
            }
        }
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` and applies the process environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut config = Self::from_toml(&text)?;
        config.apply_env(|k| std::env::var(k).ok());
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        self.validate()?;
        toml::to_string(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Endpoint and key overrides, looked up through `var`. Only affects an
    /// HTTP backend.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        if let BackendConfig::Http(http) = &mut self.backend {
            if let Some(endpoint) = var(ENV_ENDPOINT) {
                http.base_url = endpoint;
            }
            if let Some(key) = var(ENV_API_KEY) {
                http.auth_value = Some(format!("Bearer {key}"));
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        match (self.method, &self.phi) {
            (Method::Phi, None) => return invalid("method \"phi\" needs a [phi] section".into()),
            (m, Some(_)) if m != Method::Phi => return invalid(format!("[phi] section given for method \"{m}\"")),
            _ => {}
        }
        if self.workers == 0 {
            return invalid("workers must be at least 1".into());
        }
        if self.metrics.model_params == 0 {
            return invalid("metrics.model_params must be positive".into());
        }
        if let Some(format) = &self.output.format {
            if let Err(e) = format.parse::<crate::metrics::ReportFormat>() {
                return invalid(e.to_string());
            }
        }
        if i64::try_from(self.decode.seed).is_err() {
            return invalid(format!("decode.seed {} exceeds the TOML integer range", self.decode.seed));
        }
        self.decode.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(phi) = &self.phi {
            phi.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }
}
