//! HTTP backend speaking the OpenAI-compatible chat-completions protocol.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backend::{BackendRequest, ReasoningBackend, Role};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    /// Base address, e.g. `https://api.example.com`; the client posts to
    /// `{base_url}/v1/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token. No header is sent when
    /// unset or empty.
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Extra attempts after the first failure.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout() -> u64 {
    120
}

fn default_retries() -> u32 {
    3
}

fn default_backoff() -> u64 {
    500
}

fn default_in_flight() -> usize {
    4
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            token_env: None,
            timeout_secs: default_timeout(),
            retries: default_retries(),
            backoff_ms: default_backoff(),
            max_in_flight: default_in_flight(),
        }
    }
}

/// Counting semaphore bounding simultaneous requests.
pub struct Semaphore {
    available: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            available: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("semaphore poisoned") += 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
    gate: Semaphore,
}

enum Failure {
    Retryable(String),
    Fatal(String),
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if config.base_url.trim().is_empty() || config.model.trim().is_empty() {
            return Err(Error::invalid("remote backend", "base_url and model are required"));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Semaphore::new(config.max_in_flight);
        Ok(Self {
            config,
            agent,
            gate,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn system_prompt(role: Role) -> &'static str {
        match role {
            Role::Investigator => "You select informative time-series features for a forecasting task.",
            Role::Generator => "You are a careful time-series forecaster. Follow the output format exactly.",
            Role::Reflector => "You audit time-series forecasts and their reasoning.",
        }
    }

    fn attempt_once(&self, body: &str) -> std::result::Result<String, Failure> {
        let _permit = self.gate.acquire();
        let mut req = self
            .agent
            .post(&self.endpoint())
            .header("Content-Type", "application/json");
        if let Some(var) = &self.config.token_env {
            if let Ok(token) = std::env::var(var) {
                if !token.is_empty() {
                    req = req.header("Authorization", &format!("Bearer {token}"));
                }
            }
        }
        let mut resp = req
            .send(body)
            .map_err(|e| Failure::Retryable(format!("request failed: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retryable(format!("reading response: {e}")))?;
        if status == 429 || status >= 500 {
            return Err(Failure::Retryable(format!("HTTP {status}: {text}")));
        }
        if status >= 400 {
            return Err(Failure::Fatal(format!("HTTP {status}: {text}")));
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(format!("response is not JSON: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Failure::Fatal("response lacks choices[0].message.content".into()))
    }
}

impl ReasoningBackend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.config.model)
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<String> {
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": Self::system_prompt(request.role)},
                {"role": "user", "content": request.prompt},
            ],
        })
        .to_string();
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                let wait = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.attempt_once(&body) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(msg)) => return Err(Error::Transport(msg)),
                Err(Failure::Retryable(msg)) => {
                    warn!("{} attempt {} failed: {msg}", self.id(), attempt + 1);
                    last = msg;
                }
            }
        }
        Err(Error::Transport(format!(
            "gave up after {} attempts: {last}",
            self.config.retries + 1
        )))
    }
}
