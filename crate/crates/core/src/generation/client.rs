//! Chat-completion client: one request shape, pluggable endpoints, retries
//! with exponential backoff and a cap on requests in flight.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{GenerationPlan, QuestionKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// What a request asks about. Not sent over the wire; in-process endpoints
/// such as the mock use it in place of reading the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryContext {
    pub kind: QuestionKind,
    pub state: usize,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub seed: u64,
    #[serde(skip)]
    pub context: Option<QueryContext>,
}

impl ChatRequest {
    pub fn from_plan(plan: &GenerationPlan, prompt: impl Into<String>, seed: u64) -> Self {
        Self {
            model: plan.model_id.clone(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: plan.temperature,
            top_p: plan.top_p,
            max_tokens: plan.max_tokens,
            seed,
            context: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EndpointError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited (429)")]
    RateLimited { retry_after: Option<Duration> },
    #[error("endpoint returned status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("endpoint returned an empty completion")]
    EmptyCompletion,
    #[error("cannot decode endpoint response: {0}")]
    Decode(String),
}

impl EndpointError {
    pub fn is_retryable(&self) -> bool {
        match self {
            EndpointError::Transport(_) | EndpointError::RateLimited { .. } => true,
            EndpointError::Status { code, .. } => *code >= 500,
            _ => false,
        }
    }
}

pub trait ChatEndpoint: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError>;
}

/// OpenAI-style `POST` endpoint answering with `choices[0].message.content`.
pub struct HttpEndpoint {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            url: url.into(),
            api_key,
            agent,
        }
    }

    /// Endpoint for a plan, reading the API key from the plan's environment variable.
    pub fn from_plan(plan: &GenerationPlan) -> Self {
        let key = plan
            .api_key_env
            .as_deref()
            .and_then(|name| std::env::var(name).ok())
            .filter(|k| !k.is_empty());
        Self::new(plan.endpoint.clone(), key, Duration::from_secs(300))
    }
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: Option<WireMessage>,
    text: Option<String>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

impl ChatEndpoint for HttpEndpoint {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(request)
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        let code = resp.status().as_u16();
        if code == 429 {
            let retry_after = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok())
                .map(Duration::from_secs_f64);
            return Err(EndpointError::RateLimited { retry_after });
        }
        if !(200..300).contains(&code) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(EndpointError::Status {
                code,
                body: body.chars().take(500).collect(),
            });
        }
        let parsed: WireResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EndpointError::Decode(e.to_string()))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.and_then(|m| m.content).or(c.text))
            .unwrap_or_default();
        if text.trim().is_empty() {
            return Err(EndpointError::EmptyCompletion);
        }
        Ok(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): `base * 2^(attempt-1)`, capped.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32
            .checked_shl(attempt.saturating_sub(1))
            .unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Counters shared by concurrent callers.
#[derive(Debug, Default)]
pub struct CallStats {
    pub requests: AtomicU64,
    pub retries: AtomicU64,
    pub rate_limited: AtomicU64,
    pub failures: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStatsSnapshot {
    pub requests: u64,
    pub retries: u64,
    pub rate_limited: u64,
    pub failures: u64,
}

impl CallStats {
    pub fn snapshot(&self) -> CallStatsSnapshot {
        CallStatsSnapshot {
            requests: self.requests.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
            rate_limited: self.rate_limited.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
        }
    }
}

/// Counting semaphore bounding requests in flight.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn enter(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().expect("gate poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate poisoned");
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate poisoned") += 1;
        self.0.cv.notify_one();
    }
}

pub struct ChatClient {
    endpoint: Box<dyn ChatEndpoint>,
    retry: RetryPolicy,
    gate: Gate,
    stats: CallStats,
}

impl ChatClient {
    pub fn new(endpoint: Box<dyn ChatEndpoint>, retry: RetryPolicy, max_parallel: usize) -> Self {
        Self {
            endpoint,
            retry,
            gate: Gate::new(max_parallel),
            stats: CallStats::default(),
        }
    }

    pub fn stats(&self) -> CallStatsSnapshot {
        self.stats.snapshot()
    }

    /// One completion; transport failures, 429 and 5xx are retried with backoff.
    pub fn chat_complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let mut attempt = 0;
        loop {
            let result = {
                let _slot = self.gate.enter();
                self.stats.requests.fetch_add(1, Ordering::Relaxed);
                self.endpoint.complete(request)
            };
            match result {
                Ok(text) if text.trim().is_empty() => {
                    self.stats.failures.fetch_add(1, Ordering::Relaxed);
                    return Err(EndpointError::EmptyCompletion);
                }
                Ok(text) => return Ok(text),
                Err(err) => {
                    if let EndpointError::RateLimited { .. } = err {
                        self.stats.rate_limited.fetch_add(1, Ordering::Relaxed);
                    }
                    if !err.is_retryable() || attempt >= self.retry.max_retries {
                        self.stats.failures.fetch_add(1, Ordering::Relaxed);
                        return Err(err);
                    }
                    attempt += 1;
                    self.stats.retries.fetch_add(1, Ordering::Relaxed);
                    let mut delay = self.retry.delay(attempt);
                    if let EndpointError::RateLimited {
                        retry_after: Some(after),
                    } = err
                    {
                        delay = delay.max(after.min(self.retry.max_delay));
                    }
                    log::debug!("retry {attempt} after {delay:?}: {err}");
                    std::thread::sleep(delay);
                }
            }
        }
    }
}
