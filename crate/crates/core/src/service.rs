//! Blocking JSON-over-HTTP calls with bounded exponential-backoff retries.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    /// Worth retrying: timeouts, connection failures, 408/429/5xx.
    #[error("transient service failure: {0}")]
    Transient(String),
    #[error("service failure: {0}")]
    Permanent(String),
}

impl ServiceError {
    pub fn is_transient(&self) -> bool {
        matches!(self, ServiceError::Transient(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Attempts after the first one.
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_retries: 0,
            ..Self::default()
        }
    }

    /// Delay before retry number `attempt` (0-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(attempt as i32);
        Duration::from_millis(ms.min(self.max_backoff_ms as f64) as u64)
    }

    /// Runs `op` until it succeeds, fails permanently, or retries run out.
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, ServiceError>,
    ) -> Result<T, ServiceError> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_transient() && attempt < self.max_retries => {
                    std::thread::sleep(self.backoff(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Connection settings shared by the chat and embedding clients.
#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    agent: ureq::Agent,
}

impl HttpEndpoint {
    pub fn new(
        base_url: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        HttpEndpoint {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            timeout,
            retry,
            agent,
        }
    }

    fn post_once(&self, path: &str, body: &Value) -> Result<Value, ServiceError> {
        let url = format!("{}/{}", self.base_url, path.trim_start_matches('/'));
        let mut request = self
            .agent
            .post(&url)
            .set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        match request.send_json(body) {
            Ok(response) => response
                .into_json::<Value>()
                .map_err(|e| ServiceError::Permanent(format!("malformed response body: {e}"))),
            Err(ureq::Error::Status(code, response)) => {
                let text = response.into_string().unwrap_or_default();
                let msg = format!("HTTP {code} from {url}: {text}");
                if code == 408 || code == 429 || code >= 500 {
                    Err(ServiceError::Transient(msg))
                } else {
                    Err(ServiceError::Permanent(msg))
                }
            }
            Err(ureq::Error::Transport(t)) => Err(ServiceError::Transient(t.to_string())),
        }
    }

    /// POSTs `body` to `{base_url}/{path}` with retries.
    pub fn post_json(&self, path: &str, body: &Value) -> Result<Value, ServiceError> {
        self.retry.run(|| self.post_once(path, body))
    }
}
