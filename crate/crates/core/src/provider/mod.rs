//! Chat-model access: a live HTTP backend and a deterministic replay backend
//! behind one [`ChatProvider`] interface.

mod fixture;
mod live;

use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{self, Clock, SystemClock};
use crate::prompt::ConversationContext;

pub use fixture::{context_digest, record_fixture, Exchange, Fixture, FixtureError, FixtureStep, ReplayMismatch};
pub use live::{HttpRequest, HttpResponse, Transport, UreqTransport};

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-16k";
pub const DEFAULT_MAX_CONTEXT_TOKENS: usize = 16_000;
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const API_KEY_ENV: &str = "OPENAI_API_KEY";
pub const BASE_URL_ENV: &str = "OPENAI_BASE_URL";

/// Transport failures are retried this many times after the first try.
pub const TRANSPORT_RETRIES: u32 = 3;

#[derive(Clone, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()).map(Self)
    }

    pub(crate) fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub model_name: String,
    pub max_context_tokens: usize,
    pub temperature: f64,
    #[serde(with = "humantime_serde")]
    pub request_timeout: Duration,
    #[serde(skip)]
    pub api_key: Option<ApiKey>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model_name: DEFAULT_MODEL.to_string(),
            max_context_tokens: DEFAULT_MAX_CONTEXT_TOKENS,
            temperature: 0.0,
            request_timeout: Duration::from_secs(120),
            api_key: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_context_tokens == 0 {
            return Err("max_context_tokens must be positive".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(format!("temperature {} is outside [0, 2]", self.temperature));
        }
        Ok(())
    }
}

/// Characters divided by four, rounded up.
pub fn estimate_tokens(context: &ConversationContext) -> usize {
    context.char_count().div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderReply {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_usage: Option<TokenUsage>,
    #[serde(with = "humantime_serde")]
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("context needs about {estimated} tokens but the model allows fewer than {limit}")]
    Budget { estimated: usize, limit: usize },
    #[error("transport failed after {attempts} tries: {message}")]
    Transport { attempts: u32, message: String },
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("response could not be understood: {0}")]
    BadResponse(String),
    #[error("model returned an empty message")]
    EmptyReply,
    #[error("no API key; set {API_KEY_ENV}")]
    MissingApiKey,
    #[error(transparent)]
    Replay(#[from] ReplayMismatch),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transport { .. })
    }
}

/// Sends one conversation context to a chat model.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, context: &ConversationContext) -> Result<ProviderReply, ProviderError>;
}

enum Backend {
    Live { base_url: String },
    Replay(Fixture),
}

/// The model endpoint used by the workflow: live or replayed, plus a recorder
/// of every successful exchange.
pub struct Gateway {
    config: ModelConfig,
    backend: Backend,
    transport: Arc<dyn Transport>,
    clock: Arc<dyn Clock>,
    backoff: Duration,
    recorder: Mutex<Vec<Exchange>>,
}

impl Gateway {
    pub fn live(config: ModelConfig, base_url: impl Into<String>) -> Self {
        Self::with_backend(
            config,
            Backend::Live {
                base_url: base_url.into(),
            },
        )
    }

    pub fn replay(config: ModelConfig, fixture: Fixture) -> Self {
        Self::with_backend(config, Backend::Replay(fixture))
    }

    fn with_backend(config: ModelConfig, backend: Backend) -> Self {
        Self {
            config,
            backend,
            transport: Arc::new(UreqTransport),
            clock: Arc::new(SystemClock),
            backoff: Duration::from_secs(1),
            recorder: Mutex::new(Vec::new()),
        }
    }

    pub fn with_transport(mut self, transport: Arc<dyn Transport>) -> Self {
        self.transport = transport;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// First delay between transport retries; it doubles each time.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn is_replay(&self) -> bool {
        matches!(self.backend, Backend::Replay(_))
    }

    /// Exchanges completed so far, in order.
    pub fn recorded(&self) -> Vec<Exchange> {
        self.recorder.lock().expect("recorder lock").clone()
    }

    pub fn record_fixture(&self) -> Result<Fixture, FixtureError> {
        let mut fixture = record_fixture(&self.recorded())?;
        fixture.model = Some(self.config.model_name.clone());
        Ok(fixture)
    }

    fn check_budget(&self, context: &ConversationContext) -> Result<(), ProviderError> {
        let estimated = estimate_tokens(context);
        if estimated >= self.config.max_context_tokens {
            return Err(ProviderError::Budget {
                estimated,
                limit: self.config.max_context_tokens,
            });
        }
        Ok(())
    }

    fn send_live(&self, base_url: &str, context: &ConversationContext) -> Result<(String, Option<TokenUsage>), ProviderError> {
        let key = self.config.api_key.as_ref().ok_or(ProviderError::MissingApiKey)?;
        let request = live::chat_request(&self.config, key, base_url, context);
        let mut delay = self.backoff;
        let mut tries = 0;
        loop {
            tries += 1;
            match self.transport.post(&request) {
                Ok(response) if (200..300).contains(&response.status) => {
                    return live::parse_chat_response(&response.body);
                }
                Ok(response) if (400..500).contains(&response.status) => {
                    return Err(ProviderError::Rejected {
                        status: response.status,
                        body: response.body,
                    });
                }
                Ok(response) if tries > TRANSPORT_RETRIES => {
                    return Err(ProviderError::Transport {
                        attempts: tries,
                        message: format!("HTTP {}", response.status),
                    });
                }
                Err(message) if tries > TRANSPORT_RETRIES => {
                    return Err(ProviderError::Transport { attempts: tries, message });
                }
                Ok(_) | Err(_) => {
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
    }
}

impl ChatProvider for Gateway {
    fn complete(&self, context: &ConversationContext) -> Result<ProviderReply, ProviderError> {
        self.check_budget(context)?;
        let started = self.clock.now();
        let (text, token_usage) = match &self.backend {
            Backend::Replay(fixture) => (fixture.lookup(context)?.reply.clone(), None),
            Backend::Live { base_url } => self.send_live(base_url, context)?,
        };
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyReply);
        }
        self.recorder.lock().expect("recorder lock").push(Exchange {
            context: context.clone(),
            reply: text.clone(),
        });
        Ok(ProviderReply {
            text,
            token_usage,
            latency: clock::elapsed(started, self.clock.now()),
        })
    }
}
