//! Chat-completion client for OpenAI-compatible endpoints.
//!
//! Requests go to `POST {base_url}/chat/completions`. Timeouts, HTTP 429
//! and 5xx responses are retried with exponential backoff; any other 4xx
//! fails at once. All callers sharing a [`Gateway`] share one rate limiter.

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Mutex;
use tokio::time::Instant;
use tracing::{debug, warn};

use crate::error::GatewayError;

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";
pub const DEFAULT_MAX_TOKENS: u32 = 512;

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

fn default_timeout() -> f64 {
    60.0
}

fn default_max_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// `None` means unlimited.
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    /// First backoff delay; doubles on every retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env: default_api_key_env(),
            timeout_s: default_timeout(),
            max_retries: default_max_retries(),
            requests_per_minute: None,
            backoff_base_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let url = reqwest::Url::parse(&self.base_url)
            .map_err(|e| GatewayError::Config(format!("base_url `{}`: {e}", self.base_url)))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(GatewayError::Config(format!(
                "base_url must be http or https, got `{}`",
                url.scheme()
            )));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(GatewayError::Config("timeout_s must be positive".into()));
        }
        if self.max_retries > 10 {
            return Err(GatewayError::Config("max_retries must be at most 10".into()));
        }
        if self.requests_per_minute == Some(0) {
            return Err(GatewayError::Config(
                "requests_per_minute must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    /// Optional image sent as an `image_url` content part.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Turn {
            role: Role::User,
            text: text.into(),
            image_url: None,
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Turn {
            role: Role::Assistant,
            text: text.into(),
            image_url: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: Option<String>,
    pub turns: Vec<Turn>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Sampling seed forwarded to the endpoint, when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(turns: Vec<Turn>, temperature: f64) -> Self {
        ChatRequest {
            system_text: None,
            turns,
            temperature,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.turns.last() {
            None => return Err(GatewayError::Request("turns must not be empty".into())),
            Some(t) if t.role != Role::User => {
                return Err(GatewayError::Request("last turn must be from the user".into()))
            }
            _ => {}
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::Request("temperature must lie in [0, 2]".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::Request("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// The OpenAI-style JSON body for this request.
    pub fn to_body(&self, model: &str) -> Value {
        let mut messages = Vec::with_capacity(self.turns.len() + 1);
        if let Some(system) = &self.system_text {
            messages.push(json!({"role": "system", "content": system}));
        }
        for turn in &self.turns {
            let content = match &turn.image_url {
                None => json!(turn.text),
                Some(url) => json!([
                    {"type": "text", "text": turn.text},
                    {"type": "image_url", "image_url": {"url": url}},
                ]),
            };
            messages.push(json!({"role": turn.role, "content": content}));
        }
        let mut body = json!({
            "model": model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        if let Some(seed) = self.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    /// Text of the final user turn.
    pub fn prompt(&self) -> &str {
        self.turns.last().map(|t| t.text.as_str()).unwrap_or("")
    }
}

/// Assistant reply plus transport bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
    /// The endpoint stopped at `max_tokens`.
    pub truncated: bool,
}

/// Anything that can answer a chat request.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> impl Future<Output = Result<Completion, GatewayError>> + Send;
}

impl<T: ChatBackend> ChatBackend for Arc<T> {
    fn complete(&self, req: &ChatRequest) -> impl Future<Output = Result<Completion, GatewayError>> + Send {
        (**self).complete(req)
    }
}

impl<T: ChatBackend> ChatBackend for &T {
    fn complete(&self, req: &ChatRequest) -> impl Future<Output = Result<Completion, GatewayError>> + Send {
        (**self).complete(req)
    }
}

/// Evenly spaces request starts so no sliding minute exceeds the budget.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn per_minute(rpm: u32) -> Self {
        RateLimiter {
            interval: Duration::from_secs(60) / rpm.max(1),
            next_slot: Mutex::new(None),
        }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    pub async fn acquire(&self) {
        let slot = {
            let mut next = self.next_slot.lock().await;
            let now = Instant::now();
            let slot = next.map_or(now, |t| t.max(now));
            *next = Some(slot + self.interval);
            slot
        };
        tokio::time::sleep_until(slot).await;
    }
}

enum AttemptError {
    Retryable { status: Option<u16>, message: String },
    Fatal(GatewayError),
}

#[derive(Debug)]
pub struct Gateway {
    cfg: EndpointConfig,
    http: reqwest::Client,
    api_key: Option<String>,
    limiter: Option<RateLimiter>,
}

impl Gateway {
    pub fn new(cfg: EndpointConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_s))
            .build()
            .map_err(|e| GatewayError::Config(format!("http client: {e}")))?;
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            debug!(var = %cfg.api_key_env, "no API key in environment; sending unauthenticated requests");
        }
        let limiter = cfg.requests_per_minute.map(RateLimiter::per_minute);
        Ok(Gateway {
            cfg,
            http,
            api_key,
            limiter,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = self.cfg.backoff_base_ms as f64 * 2f64.powi(retry as i32 - 1);
        let jitter = rand::thread_rng().gen_range(0.0..=0.25);
        Duration::from_secs_f64(base * (1.0 + jitter) / 1000.0)
    }

    async fn attempt(&self, body: &Value) -> Result<Completion, AttemptError> {
        if let Some(limiter) = &self.limiter {
            limiter.acquire().await;
        }
        let mut builder = self.http.post(self.cfg.completions_url()).json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = match builder.send().await {
            Ok(r) => r,
            Err(e) => {
                return Err(AttemptError::Retryable {
                    status: None,
                    message: e.to_string(),
                })
            }
        };
        let status = response.status().as_u16();
        let text = match response.text().await {
            Ok(t) => t,
            Err(e) => {
                return Err(AttemptError::Retryable {
                    status: Some(status),
                    message: e.to_string(),
                })
            }
        };
        match status {
            200..=299 => parse_completion(&text).map_err(AttemptError::Fatal),
            429 | 500..=599 => Err(AttemptError::Retryable {
                status: Some(status),
                message: text,
            }),
            _ => Err(AttemptError::Fatal(GatewayError::Permanent {
                status,
                body: text,
            })),
        }
    }
}

fn parse_completion(body: &str) -> Result<Completion, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::Decode(e.to_string()))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::Decode("response has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::Decode("first choice has no message content".into()))?;
    let truncated = choice.get("finish_reason").and_then(Value::as_str) == Some("length");
    Ok(Completion {
        text: text.to_string(),
        attempts: 1,
        truncated,
    })
}

impl ChatBackend for Gateway {
    async fn complete(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        req.validate()?;
        let body = req.to_body(&self.cfg.model_name);
        let max_attempts = self.cfg.max_retries + 1;
        let mut last_status = None;
        let mut last_message = String::new();
        for attempt in 1..=max_attempts {
            match self.attempt(&body).await {
                Ok(mut completion) => {
                    completion.attempts = attempt;
                    if completion.truncated {
                        warn!(max_tokens = req.max_tokens, "completion truncated at max_tokens");
                    }
                    return Ok(completion);
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable { status, message }) => {
                    debug!(attempt, ?status, "retryable failure: {message}");
                    last_status = status;
                    last_message = message;
                    if attempt < max_attempts {
                        tokio::time::sleep(self.backoff(attempt)).await;
                    }
                }
            }
        }
        Err(GatewayError::Exhausted {
            attempts: max_attempts,
            last_status,
            message: last_message,
        })
    }
}
