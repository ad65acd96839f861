//! Shared JSON-over-HTTP client for the pluggable model backends.
//!
//! Every call is bounded: a request is attempted at most `max_retries + 1`
//! times with a fixed backoff, and the whole call never runs past
//! `timeout × (max_retries + 1)`.

use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Fixture,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub backend_kind: BackendKind,
    pub endpoint_url: Option<String>,
    /// Name of the environment variable holding the API key. The key itself
    /// is never stored in configuration.
    pub api_key_env: Option<String>,
    /// Per-attempt timeout in seconds.
    pub timeout: f64,
    pub max_retries: u32,
    /// Fixed pause between attempts, in milliseconds.
    pub backoff_ms: u64,
    /// Model name forwarded to chat-completion endpoints.
    pub model: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            backend_kind: BackendKind::Fixture,
            endpoint_url: None,
            api_key_env: None,
            timeout: 10.0,
            max_retries: 2,
            backoff_ms: 200,
            model: None,
        }
    }
}

impl BackendConfig {
    pub fn http(endpoint_url: impl Into<String>) -> Self {
        Self { backend_kind: BackendKind::Http, endpoint_url: Some(endpoint_url.into()), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), HttpError> {
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err(HttpError::InvalidConfig("timeout must be positive".into()));
        }
        if self.backend_kind == BackendKind::Http && self.endpoint_url.as_deref().is_none_or(str::is_empty) {
            return Err(HttpError::InvalidConfig("http backend requires endpoint_url".into()));
        }
        Ok(())
    }

    /// Upper bound on the wall time of one logical call.
    pub fn call_budget(&self) -> Duration {
        Duration::from_secs_f64(self.timeout) * (self.max_retries + 1)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HttpError {
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
    #[error("backend unavailable after {attempts} attempt(s): {last_error}")]
    Unavailable { attempts: u32, last_error: String },
    #[error("backend timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("backend returned an unreadable body: {0}")]
    BadBody(String),
}

/// Blocking JSON client. Immutable after construction.
#[derive(Debug, Clone)]
pub struct JsonClient {
    config: BackendConfig,
    base_url: String,
}

impl JsonClient {
    pub fn new(config: BackendConfig) -> Result<Self, HttpError> {
        config.validate()?;
        let base_url = config
            .endpoint_url
            .clone()
            .ok_or_else(|| HttpError::InvalidConfig("http backend requires endpoint_url".into()))?;
        Ok(Self { config, base_url: base_url.trim_end_matches('/').to_string() })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn api_key(&self) -> Option<String> {
        self.config.api_key_env.as_deref().and_then(|name| std::env::var(name).ok())
    }

    /// POSTs `body` to `<endpoint>/<path>` (or the bare endpoint when `path`
    /// is empty) and decodes the JSON response.
    pub fn post(&self, path: &str, body: &Value) -> Result<Value, HttpError> {
        let url = if path.is_empty() { self.base_url.clone() } else { format!("{}/{}", self.base_url, path) };
        let per_attempt = Duration::from_secs_f64(self.config.timeout);
        let deadline = Instant::now() + self.config.call_budget();
        let backoff = Duration::from_millis(self.config.backoff_ms);
        let key = self.api_key();

        let mut attempts = 0;
        let mut last_error = String::new();
        let mut timed_out = false;
        while attempts <= self.config.max_retries {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                break;
            }
            if attempts > 0 {
                thread::sleep(backoff.min(remaining / 2));
            }
            attempts += 1;
            let remaining = deadline.saturating_duration_since(Instant::now());
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .timeout_global(Some(per_attempt.min(remaining)))
                .build()
                .into();
            let mut req = agent.post(&url).header("Content-Type", "application/json");
            if let Some(key) = &key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(body) {
                Ok(resp) => {
                    return resp.into_body().read_json::<Value>().map_err(|e| HttpError::BadBody(e.to_string()));
                }
                Err(ureq::Error::Timeout(_)) => {
                    timed_out = true;
                    last_error = "timeout".into();
                }
                Err(e) => {
                    timed_out = false;
                    last_error = e.to_string();
                }
            }
        }
        if timed_out {
            Err(HttpError::Timeout { attempts })
        } else {
            Err(HttpError::Unavailable { attempts, last_error })
        }
    }

    /// Sends a single-message chat completion and returns the reply text.
    pub fn chat(&self, prompt: &str) -> Result<String, HttpError> {
        let body = serde_json::json!({
            "model": self.config.model.clone().unwrap_or_else(|| "default".into()),
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": 0,
        });
        let reply = self.post("", &body)?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| HttpError::BadBody("missing choices[0].message.content".into()))
    }
}
