//! Minimal chat-completion client.
//!
//! The pipeline is fully functional without it: when no endpoint is
//! configured, [`LlmClient::from_env`] reports offline mode and callers
//! switch to their deterministic template fallbacks. The wire shape is the
//! common chat-completions JSON contract (messages in, choices out);
//! endpoint and model are configuration, never code.
//!
//! Requests run through a shared rate limiter (concurrency cap plus a
//! per-minute budget) and retry transient failures with exponential
//! backoff.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENV_BASE_URL: &str = "KG2TOOL_LLM_BASE_URL";
pub const ENV_MODEL: &str = "KG2TOOL_LLM_MODEL";
pub const ENV_API_KEY: &str = "KG2TOOL_LLM_API_KEY";
pub const ENV_TIMEOUT_SECS: &str = "KG2TOOL_LLM_TIMEOUT_SECS";

pub const DEFAULT_TIMEOUT_SECS: u64 = 60;

const DEFAULT_MAX_ATTEMPTS: usize = 3;
const DEFAULT_MAX_CONCURRENT: usize = 4;
const DEFAULT_PER_MINUTE: usize = 60;

#[derive(Debug, Clone, Serialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// One request: ordered messages plus generation parameters.
#[derive(Debug, Clone)]
pub struct ChatExchange {
    pub messages: Vec<ChatMessage>,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl ChatExchange {
    pub fn new(system: Option<&str>, user: &str) -> Self {
        let mut messages = Vec::new();
        if let Some(s) = system {
            messages.push(ChatMessage {
                role: "system".into(),
                content: s.to_string(),
            });
        }
        messages.push(ChatMessage {
            role: "user".into(),
            content: user.to_string(),
        });
        ChatExchange {
            messages,
            temperature: 0.0,
            max_tokens: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.messages.iter().any(|m| m.role == "user") {
            return Err(Error::LlmMalformed {
                message: "exchange has no user message".into(),
            });
        }
        if self.temperature < 0.0 {
            return Err(Error::LlmMalformed {
                message: "temperature must be >= 0".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

/// Transport failure classification; transient errors are retried.
#[derive(Debug, Clone)]
pub enum TransportError {
    Transient(String),
    Fatal(String),
}

/// Pluggable request executor; the HTTP implementation is swapped out for
/// a scripted double in tests.
pub trait ChatTransport: Send + Sync {
    fn execute(
        &self,
        endpoint: &EndpointConfig,
        exchange: &ChatExchange,
    ) -> std::result::Result<String, TransportError>;
}

/// Blocking HTTP transport speaking the chat-completions contract.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::LlmMalformed {
                message: e.to_string(),
            })?;
        Ok(HttpTransport { client })
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct CompletionMessage {
    content: String,
}

impl ChatTransport for HttpTransport {
    fn execute(
        &self,
        endpoint: &EndpointConfig,
        exchange: &ChatExchange,
    ) -> std::result::Result<String, TransportError> {
        let url = format!(
            "{}/chat/completions",
            endpoint.base_url.trim_end_matches('/')
        );
        let body = serde_json::json!({
            "model": endpoint.model,
            "messages": exchange.messages,
            "temperature": exchange.temperature,
            "max_tokens": exchange.max_tokens,
        });
        let mut req = self.client.post(&url).json(&body);
        if let Some(key) = &endpoint.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(TransportError::Transient(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(TransportError::Fatal(format!("status {status}")));
        }
        let parsed: CompletionBody = resp
            .json()
            .map_err(|e| TransportError::Fatal(format!("malformed response body: {e}")))?;
        parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or_else(|| TransportError::Fatal("response has no choices".into()))
    }
}

/// Test double: canned responses plus a call counter. Also used to assert
/// that offline runs make zero calls.
#[derive(Default)]
pub struct ScriptedTransport {
    responses: Mutex<VecDeque<std::result::Result<String, TransportError>>>,
    calls: AtomicUsize,
}

impl ScriptedTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_ok(&self, text: &str) {
        self.responses
            .lock()
            .unwrap()
            .push_back(Ok(text.to_string()));
    }

    pub fn push_transient(&self, message: &str) {
        self.responses
            .lock()
            .unwrap()
            .push_back(Err(TransportError::Transient(message.to_string())));
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatTransport for ScriptedTransport {
    fn execute(
        &self,
        _endpoint: &EndpointConfig,
        _exchange: &ChatExchange,
    ) -> std::result::Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.responses
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(TransportError::Fatal("script exhausted".into())))
    }
}

/// Concurrency cap plus sliding-window request budget, shared by all
/// modules that talk to the endpoint.
struct RateLimiter {
    max_concurrent: usize,
    per_minute: usize,
    state: Mutex<LimiterState>,
    cv: Condvar,
}

struct LimiterState {
    in_flight: usize,
    started: VecDeque<Instant>,
}

impl RateLimiter {
    fn new(max_concurrent: usize, per_minute: usize) -> Self {
        RateLimiter {
            max_concurrent,
            per_minute,
            state: Mutex::new(LimiterState {
                in_flight: 0,
                started: VecDeque::new(),
            }),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut state = self.state.lock().unwrap();
        loop {
            let now = Instant::now();
            while state
                .started
                .front()
                .is_some_and(|t| now.duration_since(*t).as_secs() >= 60)
            {
                state.started.pop_front();
            }
            if state.in_flight < self.max_concurrent && state.started.len() < self.per_minute {
                state.in_flight += 1;
                state.started.push_back(now);
                return;
            }
            let (next, _) = self
                .cv
                .wait_timeout(state, Duration::from_millis(50))
                .unwrap();
            state = next;
        }
    }

    fn release(&self) {
        self.state.lock().unwrap().in_flight -= 1;
        self.cv.notify_one();
    }
}

/// Shared client: retries, backoff, central rate limiting.
///
/// `Debug` shows the endpoint only; transports are opaque.
pub struct LlmClient {
    endpoint: EndpointConfig,
    transport: Arc<dyn ChatTransport>,
    limiter: RateLimiter,
    max_attempts: usize,
    backoff_base: Duration,
}

impl LlmClient {
    /// Builds the client from environment configuration, or reports
    /// offline mode when no endpoint is set.
    pub fn from_env() -> Result<Self> {
        Self::from_vars(
            std::env::var(ENV_BASE_URL).ok(),
            std::env::var(ENV_MODEL).ok(),
            std::env::var(ENV_API_KEY).ok(),
        )
    }

    pub fn from_vars(
        base_url: Option<String>,
        model: Option<String>,
        api_key: Option<String>,
    ) -> Result<Self> {
        let timeout = std::env::var(ENV_TIMEOUT_SECS)
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(DEFAULT_TIMEOUT_SECS);
        Self::from_parts(base_url, model, api_key, Duration::from_secs(timeout))
    }

    pub fn from_parts(
        base_url: Option<String>,
        model: Option<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self> {
        let (Some(base_url), Some(model)) = (base_url, model) else {
            return Err(Error::LlmOffline);
        };
        if base_url.trim().is_empty() || model.trim().is_empty() {
            return Err(Error::LlmOffline);
        }
        let endpoint = EndpointConfig {
            base_url,
            model,
            api_key,
            timeout,
        };
        let transport = Arc::new(HttpTransport::new(timeout)?);
        Ok(Self::with_transport(endpoint, transport))
    }

    pub fn with_transport(endpoint: EndpointConfig, transport: Arc<dyn ChatTransport>) -> Self {
        LlmClient {
            endpoint,
            transport,
            limiter: RateLimiter::new(DEFAULT_MAX_CONCURRENT, DEFAULT_PER_MINUTE),
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            backoff_base: Duration::from_millis(200),
        }
    }

    /// Shrinks retry backoff; for tests.
    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    /// Sends the exchange and returns the first completion's text.
    pub fn chat(&self, exchange: &ChatExchange) -> Result<String> {
        exchange.validate()?;
        let mut last_error = String::new();
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff_base * (1 << (attempt - 1)));
            }
            self.limiter.acquire();
            let outcome = self.transport.execute(&self.endpoint, exchange);
            self.limiter.release();
            match outcome {
                Ok(text) => return Ok(text),
                Err(TransportError::Transient(msg)) => last_error = msg,
                Err(TransportError::Fatal(msg)) => {
                    return Err(Error::LlmMalformed { message: msg })
                }
            }
        }
        Err(Error::LlmExhausted {
            attempts: self.max_attempts,
            message: last_error,
        })
    }
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("base_url", &self.endpoint.base_url)
            .field("model", &self.endpoint.model)
            .finish()
    }
}
