//! Chat-completion gateway: one wire protocol (OpenAI-compatible), retries
//! with exponential backoff, a shared rate limiter and a response cache.

mod cache;
mod limiter;
pub mod mock;
mod openai;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::Cache;
pub use limiter::{Clock, ManualClock, RateLimiter, SystemClock};
pub use mock::{AnnotationFixture, MockError, MockProvider, MockScript, RunReply};
pub use openai::OpenAiProvider;

pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_MAX_TOKENS: u32 = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub system_prompt: Option<String>,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Distinguishes otherwise identical requests, e.g. the runs of one item.
    pub seed_tag: String,
}

impl CompletionRequest {
    pub fn new(model: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            system_prompt: None,
            user_prompt: user_prompt.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed_tag: String::new(),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_seed_tag(mut self, tag: impl Into<String>) -> Self {
        self.seed_tag = tag.into();
        self
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system_prompt = Some(system.into());
        self
    }
}

fn default_backoff_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub name: String,
    pub base_url: String,
    /// Environment variable holding the API key; empty for the mock.
    pub api_key_env: String,
    pub requests_per_minute: u32,
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
}

impl ProviderConfig {
    pub fn mock() -> Self {
        Self {
            name: "mock".into(),
            base_url: "mock://".into(),
            api_key_env: String::new(),
            requests_per_minute: 1_000_000,
            max_retries: 0,
            initial_backoff_ms: 0,
        }
    }

    pub fn openai() -> Self {
        Self {
            name: "openai".into(),
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            requests_per_minute: 500,
            max_retries: 5,
            initial_backoff_ms: default_backoff_ms(),
        }
    }

    pub fn deepseek() -> Self {
        Self {
            name: "deepseek".into(),
            base_url: "https://api.deepseek.com/v1".into(),
            api_key_env: "DEEPSEEK_API_KEY".into(),
            requests_per_minute: 300,
            max_retries: 5,
            initial_backoff_ms: default_backoff_ms(),
        }
    }

    /// Built-in provider by name.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "mock" => Some(Self::mock()),
            "openai" => Some(Self::openai()),
            "deepseek" => Some(Self::deepseek()),
            _ => None,
        }
    }

    pub fn is_mock(&self) -> bool {
        self.name == "mock"
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.initial_backoff_ms.saturating_mul(1u64 << attempt.min(16));
        Duration::from_millis(ms.min(30_000))
    }
}

/// Failure of a single provider call.
#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("request failed: {0}")]
    Fatal(String),
    #[error(transparent)]
    Mock(#[from] MockError),
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("environment variable {0} is not set")]
    MissingKey(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication rejected by {provider}: {message}")]
    Auth { provider: String, message: String },
    #[error("{provider} failed after {attempts} attempt(s): {message}")]
    Provider {
        provider: String,
        attempts: u32,
        message: String,
    },
    #[error(transparent)]
    Mock(#[from] MockError),
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    async fn send(&self, req: &CompletionRequest) -> Result<String, ProviderError>;
}

#[derive(Serialize)]
struct CacheInputs<'a> {
    provider: &'a str,
    base_url: &'a str,
    request: &'a CompletionRequest,
}

/// Cached, rate-limited, retrying front to a [`ChatProvider`].
pub struct LlmGateway {
    provider: Arc<dyn ChatProvider>,
    config: ProviderConfig,
    cache: Arc<Cache>,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
    calls: AtomicUsize,
}

impl LlmGateway {
    pub fn new(provider: Arc<dyn ChatProvider>, config: ProviderConfig, cache: Arc<Cache>) -> Self {
        Self::with_clock(provider, config, cache, Arc::new(SystemClock::default()))
    }

    pub fn with_clock(
        provider: Arc<dyn ChatProvider>,
        config: ProviderConfig,
        cache: Arc<Cache>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        let limiter = RateLimiter::per_minute(config.requests_per_minute, clock.clone());
        Self {
            provider,
            config,
            cache,
            limiter,
            clock,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn cache(&self) -> &Arc<Cache> {
        &self.cache
    }

    /// Number of requests that reached the provider (cache misses, retries included).
    pub fn provider_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn cache_key(&self, req: &CompletionRequest) -> String {
        Cache::key(
            "complete",
            &CacheInputs {
                provider: &self.config.name,
                base_url: &self.config.base_url,
                request: req,
            },
        )
    }

    pub async fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        if !(req.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!("temperature {} < 0", req.temperature)));
        }
        if req.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        let key = self.cache_key(req);
        if let Some(hit) = self.cache.get::<String>(&key) {
            return Ok(hit);
        }

        let mut attempt = 0u32;
        loop {
            self.limiter.acquire().await;
            self.calls.fetch_add(1, Ordering::SeqCst);
            match self.provider.send(req).await {
                Ok(text) => {
                    if let Err(e) = self.cache.put(&key, &text) {
                        tracing::warn!("could not cache completion: {e}");
                    }
                    return Ok(text);
                }
                Err(ProviderError::Auth(message)) => {
                    return Err(LlmError::Auth {
                        provider: self.config.name.clone(),
                        message,
                    })
                }
                Err(ProviderError::Mock(e)) => return Err(e.into()),
                Err(ProviderError::Fatal(message)) => {
                    return Err(LlmError::Provider {
                        provider: self.config.name.clone(),
                        attempts: attempt + 1,
                        message,
                    })
                }
                Err(ProviderError::Transient(message)) => {
                    if attempt >= self.config.max_retries {
                        return Err(LlmError::Provider {
                            provider: self.config.name.clone(),
                            attempts: attempt + 1,
                            message,
                        });
                    }
                    let wait = self.config.backoff(attempt);
                    tracing::debug!("{}: {message}; retrying in {wait:?}", self.config.name);
                    self.clock.sleep(wait).await;
                    attempt += 1;
                }
            }
        }
    }
}
