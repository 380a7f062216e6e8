use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::{BackendConfig, BackendError, ChatBackend};

static REQUESTS: AtomicUsize = AtomicUsize::new(0);

/// Number of HTTP requests the remote backend has attempted in this process.
pub fn remote_request_count() -> usize {
    REQUESTS.load(Ordering::SeqCst)
}

#[cfg(not(feature = "remote"))]
pub(super) fn build(_: &BackendConfig) -> Result<Arc<dyn ChatBackend>, BackendError> {
    Err(BackendError::Unavailable(
        "built without the `remote` feature".into(),
    ))
}

#[cfg(feature = "remote")]
pub(super) fn build(config: &BackendConfig) -> Result<Arc<dyn ChatBackend>, BackendError> {
    let key = std::env::var(super::API_KEY_ENV)
        .ok()
        .filter(|k| !k.trim().is_empty())
        .ok_or_else(|| BackendError::Unavailable(format!("{} is not set", super::API_KEY_ENV)))?;
    Ok(Arc::new(RemoteBackend::new(config, key)))
}

#[cfg(feature = "remote")]
pub use client::RemoteBackend;

#[cfg(feature = "remote")]
mod client {
    use std::sync::atomic::Ordering;

    use serde_json::{json, Value};

    use super::super::{check_messages, BackendConfig, BackendError, ChatBackend};
    use super::REQUESTS;
    use crate::protocol::ChatTurn;

    /// Blocking chat-completions client: one POST per `complete`.
    pub struct RemoteBackend {
        agent: ureq::Agent,
        endpoint: String,
        model: String,
        temperature: f64,
        key: String,
    }

    impl RemoteBackend {
        pub fn new(config: &BackendConfig, key: String) -> Self {
            let agent = ureq::Agent::config_builder()
                .timeout_global(Some(config.timeout))
                .http_status_as_error(false)
                .build()
                .into();
            Self {
                agent,
                endpoint: config.endpoint.clone().unwrap_or_default(),
                model: config.model.clone().unwrap_or_default(),
                temperature: config.temperature,
                key,
            }
        }
    }

    impl ChatBackend for RemoteBackend {
        fn identity(&self) -> (&str, f64) {
            (&self.model, self.temperature)
        }

        fn complete(&self, messages: &[ChatTurn]) -> Result<String, BackendError> {
            check_messages(messages)?;
            let body = json!({
                "model": self.model,
                "temperature": self.temperature,
                "messages": messages,
            });
            REQUESTS.fetch_add(1, Ordering::SeqCst);
            let mut resp = self
                .agent
                .post(&self.endpoint)
                .header("Authorization", &format!("Bearer {}", self.key))
                .send_json(&body)
                .map_err(transport_error)?;
            let status = resp.status().as_u16();
            if !(200..300).contains(&status) {
                return Err(BackendError::HttpError(status));
            }
            let reply: Value = resp.body_mut().read_json().map_err(transport_error)?;
            extract_reply(&reply)
        }
    }

    fn transport_error(e: ureq::Error) -> BackendError {
        match e {
            ureq::Error::Timeout(_) => BackendError::Timeout,
            ureq::Error::StatusCode(s) => BackendError::HttpError(s),
            other => BackendError::Transport(other.to_string()),
        }
    }

    /// Message text of the first choice. Native tool calls are appended as a
    /// fenced JSON array of `{tool, params}` so one parser covers both forms.
    pub(super) fn extract_reply(reply: &Value) -> Result<String, BackendError> {
        let message = reply
            .pointer("/choices/0/message")
            .ok_or_else(|| BackendError::Transport("response has no choices".into()))?;
        let mut text = message
            .get("content")
            .and_then(Value::as_str)
            .unwrap_or("")
            .to_string();
        if let Some(calls) = message.get("tool_calls").and_then(Value::as_array) {
            let converted: Vec<Value> = calls
                .iter()
                .filter_map(|c| {
                    let f = c.get("function")?;
                    let name = f.get("name")?.as_str()?;
                    let params = match f.get("arguments") {
                        Some(Value::String(s)) => serde_json::from_str(s).ok()?,
                        Some(v @ Value::Object(_)) => v.clone(),
                        _ => json!({}),
                    };
                    Some(json!({"tool": name, "params": params}))
                })
                .collect();
            if !converted.is_empty() {
                text.push_str("\n```json\n");
                text.push_str(&Value::Array(converted).to_string());
                text.push_str("\n```");
            }
        }
        Ok(text)
    }

}

#[cfg(all(test, feature = "remote"))]
mod tests {
    use super::*;
    use crate::protocol::ChatTurn;

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let config = BackendConfig {
            timeout: std::time::Duration::from_secs(2),
            ..BackendConfig::remote("http://127.0.0.1:9/v1/chat/completions", "m")
        };
        let backend = RemoteBackend::new(&config, "k".into());
        let before = remote_request_count();
        let err = backend
            .complete(&[ChatTurn::user("[role: actor]\nx")])
            .unwrap_err();
        assert!(matches!(err, BackendError::Transport(_) | BackendError::Timeout));
        assert!(remote_request_count() > before);
    }
}
