//! Completion backends: an HTTP completion endpoint and the offline mock.

use std::collections::HashMap;
use std::time::Duration;

use futures::future::BoxFuture;
use serde::{Deserialize, Serialize};

use super::mock::{mock_generate, MockPolicy};
use crate::tasks::{parse_rendered, BundleRecord};
use crate::term::Term;
use crate::CountTable;

/// Environment variable holding the bearer token, if the endpoint needs one.
pub const TOKEN_ENV: &str = "FREQGAP_API_TOKEN";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryConfig {
    /// Total tries per request, including the first.
    pub attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        Self { attempts: 5, initial_backoff_ms: 200, max_backoff_ms: 10_000 }
    }
}

impl RetryConfig {
    /// Pause before retry number `retry` (0-based): doubling, capped.
    pub fn backoff(&self, retry: u32) -> Duration {
        let ms = self.initial_backoff_ms.saturating_mul(1u64 << retry.min(20));
        Duration::from_millis(ms.min(self.max_backoff_ms))
    }
}

fn default_path() -> String {
    "/v1/completions".into()
}
fn default_max_new_tokens() -> u32 {
    8
}
fn default_stop() -> Vec<String> {
    vec!["\n".into(), "Q:".into()]
}
fn default_max_in_flight() -> usize {
    8
}
fn default_timeout_ms() -> u64 {
    60_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    #[serde(default = "default_path")]
    pub path: String,
    pub model: String,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
    /// Always 0: decoding is greedy.
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_stop")]
    pub stop: Vec<String>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryConfig,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            path: default_path(),
            model: model.into(),
            max_new_tokens: default_max_new_tokens(),
            temperature: 0.0,
            stop: default_stop(),
            max_in_flight: default_max_in_flight(),
            retry: RetryConfig::default(),
            timeout_ms: default_timeout_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.temperature != 0.0 {
            return Err("temperature must be 0 (greedy decoding)".into());
        }
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be ≥ 1".into());
        }
        if self.retry.attempts == 0 {
            return Err("retry.attempts must be ≥ 1".into());
        }
        if self.base_url.is_empty() {
            return Err("base_url is empty".into());
        }
        Ok(())
    }

    pub fn url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if self.path.is_empty() {
            base.to_string()
        } else if self.path.starts_with('/') {
            format!("{base}{}", self.path)
        } else {
            format!("{base}/{}", self.path)
        }
    }
}

/// Why one completion attempt failed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RequestError {
    /// Worth retrying: 429, 5xx, timeouts, broken bodies.
    Transient(String),
    /// No connection could be made.
    Unreachable(String),
    /// Rejected in a way retrying will not fix.
    Permanent(String),
    /// The response arrived but holds no generated text.
    Malformed(String),
}

impl RequestError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, RequestError::Transient(_) | RequestError::Unreachable(_))
    }

    pub fn message(&self) -> String {
        match self {
            RequestError::Transient(m) => format!("transient: {m}"),
            RequestError::Unreachable(m) => format!("unreachable: {m}"),
            RequestError::Permanent(m) => format!("rejected: {m}"),
            RequestError::Malformed(m) => format!("malformed response: {m}"),
        }
    }
}

/// Something that turns a prompt into generated text.
pub trait Completer: Send + Sync {
    fn complete<'a>(&'a self, bundle: &'a BundleRecord) -> BoxFuture<'a, Result<String, RequestError>>;
}

pub struct HttpCompleter {
    client: reqwest::Client,
    config: EndpointConfig,
    url: String,
    token: Option<String>,
}

impl HttpCompleter {
    pub fn new(config: EndpointConfig) -> Result<Self, String> {
        config.validate()?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| format!("http client: {e}"))?;
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Ok(Self { client, url: config.url(), config, token })
    }
}

/// Generated text from the usual completion response shapes.
pub fn response_text(body: &serde_json::Value) -> Option<&str> {
    let choice = body.get("choices").and_then(|c| c.get(0));
    choice
        .and_then(|c| c.get("text"))
        .or_else(|| choice.and_then(|c| c.get("message")).and_then(|m| m.get("content")))
        .or_else(|| body.get("text"))
        .or_else(|| body.get("generated_text"))
        .and_then(|v| v.as_str())
}

impl Completer for HttpCompleter {
    fn complete<'a>(&'a self, bundle: &'a BundleRecord) -> BoxFuture<'a, Result<String, RequestError>> {
        Box::pin(async move {
            let body = serde_json::json!({
                "model": self.config.model,
                "prompt": bundle.prompt,
                "max_tokens": self.config.max_new_tokens,
                "temperature": self.config.temperature,
                "stop": self.config.stop,
            });
            let mut request = self.client.post(&self.url).json(&body);
            if let Some(token) = &self.token {
                request = request.bearer_auth(token);
            }
            let response = request.send().await.map_err(|e| {
                if e.is_connect() {
                    RequestError::Unreachable(e.to_string())
                } else {
                    RequestError::Transient(e.to_string())
                }
            })?;
            let status = response.status();
            if status.as_u16() == 429 || status.is_server_error() {
                return Err(RequestError::Transient(format!("HTTP {status}")));
            }
            if !status.is_success() {
                return Err(RequestError::Permanent(format!("HTTP {status}")));
            }
            let bytes = response.bytes().await.map_err(|e| RequestError::Transient(e.to_string()))?;
            let value: serde_json::Value =
                serde_json::from_slice(&bytes).map_err(|e| RequestError::Malformed(e.to_string()))?;
            response_text(&value)
                .map(str::to_string)
                .ok_or_else(|| RequestError::Malformed("no generated text field".into()))
        })
    }
}

/// Offline model answering from the corpus frequency of each question's first operand.
pub struct MockCompleter {
    policy: MockPolicy,
    freqs: HashMap<u32, u64>,
}

impl MockCompleter {
    pub fn new(policy: MockPolicy, counts: Option<&CountTable>) -> Self {
        let freqs = counts
            .map(|t| {
                t.entries()
                    .iter()
                    .filter(|(set, _)| set.len() == 1)
                    .filter_map(|(set, n)| set.terms().next().and_then(Term::number).map(|v| (v, *n)))
                    .collect()
            })
            .unwrap_or_default();
        Self { policy, freqs }
    }

    pub fn frequency(&self, bundle: &BundleRecord) -> u64 {
        parse_rendered(bundle.question()).and_then(|q| self.freqs.get(&q.x1).copied()).unwrap_or(0)
    }
}

impl Completer for MockCompleter {
    fn complete<'a>(&'a self, bundle: &'a BundleRecord) -> BoxFuture<'a, Result<String, RequestError>> {
        let text = mock_generate(bundle, self.frequency(bundle), &self.policy);
        Box::pin(async move { Ok(text) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_defaults_and_validation() {
        let cfg: EndpointConfig = serde_json::from_str(r#"{"base_url":"http://h:1/","model":"m"}"#).unwrap();
        assert_eq!(cfg, EndpointConfig::new("http://h:1/", "m"));
        assert_eq!(cfg.url(), "http://h:1/v1/completions");
        assert_eq!(cfg.max_new_tokens, 8);
        assert!(cfg.validate().is_ok());
        let hot = EndpointConfig { temperature: 0.7, ..cfg.clone() };
        assert!(hot.validate().is_err());
        let none = EndpointConfig { max_in_flight: 0, ..cfg };
        assert!(none.validate().is_err());
        assert!(serde_json::from_str::<EndpointConfig>(r#"{"base_url":"x","model":"m","api_key":"s"}"#).is_err());
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let r = RetryConfig { attempts: 4, initial_backoff_ms: 100, max_backoff_ms: 350 };
        let ms: Vec<u128> = (0..4).map(|i| r.backoff(i).as_millis()).collect();
        assert_eq!(ms, vec![100, 200, 350, 350]);
    }

    #[test]
    fn response_shapes() {
        let v = serde_json::json!({"choices":[{"text":" 432"}]});
        assert_eq!(response_text(&v), Some(" 432"));
        let v = serde_json::json!({"choices":[{"message":{"content":"12"}}]});
        assert_eq!(response_text(&v), Some("12"));
        assert_eq!(response_text(&serde_json::json!({"generated_text":"7"})), Some("7"));
        assert_eq!(response_text(&serde_json::json!({"choices":[]})), None);
    }
}
