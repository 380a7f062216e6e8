//! Chat backends: a remote chat-completions client, a deterministic
//! heuristic policy, and digest-keyed record/replay.

mod heuristic;
mod remote;
mod replay;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::ChatTurn;

pub use heuristic::HeuristicBackend;
pub use remote::remote_request_count;
#[cfg(feature = "remote")]
pub use remote::RemoteBackend;
pub use replay::{RecordingBackend, ReplayBackend, ReplayEntry};

/// Environment variable holding the remote API key.
pub const API_KEY_ENV: &str = "TSAGENT_API_KEY";
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP status {0}")]
    HttpError(u16),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no recorded reply for request digest {0}")]
    ReplayMiss(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
    #[error("message {0} has empty content")]
    EmptyMessage(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Heuristic,
    Replay,
}

impl BackendKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "remote" => Some(Self::Remote),
            "heuristic" => Some(Self::Heuristic),
            "replay" => Some(Self::Replay),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    pub temperature: f64,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    #[serde(default)]
    pub replay_path: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self::heuristic()
    }
}

impl BackendConfig {
    pub fn heuristic() -> Self {
        Self {
            kind: BackendKind::Heuristic,
            endpoint: None,
            model: None,
            temperature: DEFAULT_TEMPERATURE,
            timeout: DEFAULT_TIMEOUT,
            replay_path: None,
        }
    }

    pub fn remote(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Remote,
            endpoint: Some(endpoint.into()),
            model: Some(model.into()),
            ..Self::heuristic()
        }
    }

    pub fn replay(path: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Replay,
            replay_path: Some(path.into()),
            ..Self::heuristic()
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidConfig(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.timeout.is_zero() {
            return Err(BackendError::InvalidConfig("timeout must be positive".into()));
        }
        match self.kind {
            BackendKind::Remote if self.endpoint.is_none() || self.model.is_none() => Err(
                BackendError::InvalidConfig("remote backend needs an endpoint and a model".into()),
            ),
            BackendKind::Replay if self.replay_path.is_none() => Err(
                BackendError::InvalidConfig("replay backend needs a replay file".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Model name that goes into request digests.
    pub fn model_name(&self) -> &str {
        match (self.kind, &self.model) {
            (_, Some(m)) => m,
            (BackendKind::Heuristic, None) => HeuristicBackend::MODEL,
            _ => "",
        }
    }
}

/// Something that answers a chat exchange.
pub trait ChatBackend: Send + Sync {
    /// Model name and sampling temperature, as folded into request digests.
    fn identity(&self) -> (&str, f64);

    fn complete(&self, messages: &[ChatTurn]) -> Result<String, BackendError>;

    fn digest(&self, messages: &[ChatTurn]) -> String {
        let (model, temperature) = self.identity();
        request_digest(model, temperature, messages)
    }
}

/// Hex SHA-256 of the canonical JSON `{model, temperature, messages}`.
pub fn request_digest(model: &str, temperature: f64, messages: &[ChatTurn]) -> String {
    let canonical = serde_json::json!({
        "model": model,
        "temperature": temperature,
        "messages": messages,
    });
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

pub(crate) fn check_messages(messages: &[ChatTurn]) -> Result<(), BackendError> {
    match messages.iter().position(|m| m.content.trim().is_empty()) {
        Some(i) => Err(BackendError::EmptyMessage(i)),
        None => Ok(()),
    }
}

/// Instantiates the backend a config describes. Remote backends fail here
/// when the API key is absent, before any request is made.
pub fn build_backend(config: &BackendConfig) -> Result<Arc<dyn ChatBackend>, BackendError> {
    config.validate()?;
    match config.kind {
        BackendKind::Heuristic => Ok(Arc::new(HeuristicBackend::with_temperature(
            config.temperature,
        ))),
        BackendKind::Replay => {
            let path = config.replay_path.as_ref().expect("validated");
            Ok(Arc::new(ReplayBackend::load(
                path,
                config.model_name(),
                config.temperature,
            )?))
        }
        BackendKind::Remote => remote::build(config),
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}
