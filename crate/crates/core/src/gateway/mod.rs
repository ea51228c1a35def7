//! Uniform access to chat and embedding models.
//!
//! A [`Gateway`] wraps one [`Backend`] with the bounded-concurrency and retry
//! contract. Three backends ship with the crate: an HTTP client for
//! chat-completions style servers, a fixture-driven mock, and a synthetic
//! persuadee oracle that makes the whole pipeline checkable offline.

pub mod embedder;
mod http;
mod mock;
pub mod oracle;
pub mod prompts;
mod verdict;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::debug;

pub use embedder::{HashingEmbedder, HASH_EMBED_DIM};
pub use http::HttpBackend;
pub use mock::{mock_key, MockBackend};
pub use oracle::{OracleBackend, OracleHints, OracleWorld};
pub use prompts::{PromptKind, PromptSet, RenderedPrompt};
pub use verdict::{parse_verdict, PredictionContext, ScoringMode, Verdict, ViewChange};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited (after {attempts} attempts)")]
    RateLimited { attempts: u32 },
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("no mock fixture for key {0}")]
    FixtureMiss(String),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    BadResponse(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding request with no texts")]
    EmptyInput,
    #[error("invalid chat parameters: {0}")]
    InvalidParams(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("invalid oracle world: {0}")]
    InvalidWorld(String),
    #[error("oracle cannot answer: {0}")]
    Oracle(String),
    #[error("unparseable verdict: {0:?}")]
    UnparseableVerdict(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GatewayError {
    pub fn is_transient(&self) -> bool {
        matches!(self, GatewayError::Timeout | GatewayError::RateLimited { .. } | GatewayError::Transient(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, backoff_ms: 250 }
    }
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_concurrency() -> usize {
    4
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_tokens() -> u32 {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Base URL of an OpenAI-compatible server, e.g. `http://localhost:8000/v1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub model_name: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Fixture file or directory of `*.jsonl` files (mock backend).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
    /// `world.json` (oracle backend).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<PathBuf>,
    /// Expected embedding dimensionality; checked on every embed call.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    /// The query-generator model has been preference-trained and answers
    /// the single-step inference prompt.
    #[serde(default)]
    pub trained: bool,
}

impl BackendConfig {
    pub fn new(kind: BackendKind, model_name: &str) -> Self {
        Self {
            kind,
            endpoint: None,
            model_name: model_name.to_string(),
            api_key_env: default_api_key_env(),
            max_concurrency: default_concurrency(),
            retry: RetryPolicy::default(),
            timeout_ms: default_timeout_ms(),
            max_tokens: default_max_tokens(),
            fixtures: None,
            world: None,
            embedding_dim: None,
            trained: false,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_concurrency == 0 {
            return Err(GatewayError::InvalidConfig("max_concurrency must be at least 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(GatewayError::InvalidConfig("retry.max_attempts must be at least 1".into()));
        }
        if self.kind == BackendKind::Http && self.endpoint.as_deref().is_none_or(str::is_empty) {
            return Err(GatewayError::InvalidConfig("http backend requires an endpoint".into()));
        }
        Ok(())
    }

    /// Resolves relative fixture/world paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.fixtures, &mut self.world].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    pub system: String,
    pub user: String,
}

impl ChatParams {
    pub fn new(prompt: RenderedPrompt, temperature: f64, max_tokens: u32, seed: Option<u64>) -> Self {
        Self { temperature, max_tokens, seed, system: prompt.system, user: prompt.user }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidParams(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidParams("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Probability mass the model put on a "yes" first token, when the
    /// backend exposes token likelihoods.
    pub yes_prob: Option<f64>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), yes_prob: None }
    }
}

/// One model provider. Implementations make a single attempt per call;
/// retries and concurrency limits live in [`Gateway`].
pub trait Backend: Send + Sync {
    fn complete(&self, model: &str, params: &ChatParams, logprobs: bool) -> Result<Completion, GatewayError>;
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError>;
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Limiter {
    available: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self { available: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.cv.notify_one();
    }
}

pub struct Gateway {
    config: BackendConfig,
    backend: Arc<dyn Backend>,
    limiter: Limiter,
    requests: AtomicU64,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("config", &self.config).field("requests", &self.requests()).finish()
    }
}

impl Gateway {
    pub fn new(config: BackendConfig, backend: Arc<dyn Backend>) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(Self { limiter: Limiter::new(config.max_concurrency), config, backend, requests: AtomicU64::new(0) })
    }

    /// Builds the backend named by `config`. Oracle backends receive `hints`
    /// so they can recognise corpus texts, and `prompts` when the templates
    /// have been overridden.
    pub fn from_config(
        config: BackendConfig,
        hints: Option<&OracleHints>,
        prompts: Option<&PromptSet>,
    ) -> Result<Self, GatewayError> {
        config.validate()?;
        let backend: Arc<dyn Backend> = match config.kind {
            BackendKind::Http => Arc::new(HttpBackend::new(&config)?),
            BackendKind::Mock => {
                let path = config
                    .fixtures
                    .as_deref()
                    .ok_or_else(|| GatewayError::InvalidConfig("mock backend requires `fixtures`".into()))?;
                Arc::new(MockBackend::from_path(path)?)
            }
            BackendKind::Oracle => {
                let path = config
                    .world
                    .as_deref()
                    .ok_or_else(|| GatewayError::InvalidConfig("oracle backend requires `world`".into()))?;
                let mut oracle = OracleBackend::new(OracleWorld::load(path)?)?;
                if let Some(h) = hints {
                    oracle = oracle.with_hints(h.clone());
                }
                if let Some(p) = prompts {
                    oracle = oracle.with_prompts(p.clone());
                }
                Arc::new(oracle)
            }
        };
        Self::new(config, backend)
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn model_name(&self) -> &str {
        &self.config.model_name
    }

    /// Number of backend calls issued, retries included.
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn chat(&self, params: &ChatParams) -> Result<String, GatewayError> {
        self.complete(params, false).map(|c| c.text)
    }

    pub fn complete(&self, params: &ChatParams, logprobs: bool) -> Result<Completion, GatewayError> {
        params.validate()?;
        self.with_retry(|| self.backend.complete(&self.config.model_name, params, logprobs))
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let vectors = self.with_retry(|| self.backend.embed(&self.config.model_name, texts))?;
        if vectors.len() != texts.len() {
            return Err(GatewayError::BadResponse(format!(
                "{} vectors returned for {} texts",
                vectors.len(),
                texts.len()
            )));
        }
        let expected = self.config.embedding_dim.unwrap_or(vectors[0].len());
        if let Some(v) = vectors.iter().find(|v| v.len() != expected) {
            return Err(GatewayError::DimensionMismatch { expected, got: v.len() });
        }
        Ok(vectors)
    }

    pub fn embed_one(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
        Ok(self.embed(&[text.to_string()])?.remove(0))
    }

    fn with_retry<T>(&self, call: impl Fn() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let policy = self.config.retry;
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.limiter.acquire();
                self.requests.fetch_add(1, Ordering::Relaxed);
                call()
            };
            match result {
                Err(e) if e.is_transient() && attempt < policy.max_attempts => {
                    let delay = policy.backoff_ms.saturating_mul(1u64 << (attempt - 1).min(16));
                    debug!(attempt, delay_ms = delay, error = %e, "retrying transient failure");
                    std::thread::sleep(Duration::from_millis(delay));
                }
                Err(GatewayError::RateLimited { .. }) => return Err(GatewayError::RateLimited { attempts: attempt }),
                other => return other,
            }
        }
    }
}

/// The four model roles of the pipeline.
#[derive(Debug, Clone)]
pub struct Roles {
    pub predictor: Arc<Gateway>,
    pub profiler: Arc<Gateway>,
    pub querygen: Arc<Gateway>,
    pub embedder: Arc<Gateway>,
}

impl Roles {
    /// All four roles served by one gateway.
    pub fn shared(gateway: Arc<Gateway>) -> Self {
        Self { predictor: gateway.clone(), profiler: gateway.clone(), querygen: gateway.clone(), embedder: gateway }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    struct Flaky {
        failures: AtomicUsize,
        error: fn() -> GatewayError,
        calls: AtomicUsize,
    }

    impl Backend for Flaky {
        fn complete(&self, _: &str, _: &ChatParams, _: bool) -> Result<Completion, GatewayError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err((self.error)());
            }
            Ok(Completion::text("ok"))
        }
        fn embed(&self, _: &str, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
            Ok(texts.iter().map(|_| vec![1.0, 0.0]).collect())
        }
    }

    fn params() -> ChatParams {
        ChatParams { temperature: 0.0, max_tokens: 8, seed: None, system: "s".into(), user: "u".into() }
    }

    fn gateway(failures: usize, error: fn() -> GatewayError, attempts: u32) -> (Gateway, Arc<Flaky>) {
        let backend = Arc::new(Flaky { failures: AtomicUsize::new(failures), error, calls: AtomicUsize::new(0) });
        let mut cfg = BackendConfig::new(BackendKind::Mock, "m");
        cfg.retry = RetryPolicy { max_attempts: attempts, backoff_ms: 1 };
        (Gateway::new(cfg, backend.clone()).unwrap(), backend)
    }

    #[test]
    fn retries_transient_failures() {
        let (gw, backend) = gateway(2, || GatewayError::RateLimited { attempts: 1 }, 3);
        assert_eq!(gw.chat(&params()).unwrap(), "ok");
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
        assert_eq!(gw.requests(), 3);
    }

    #[test]
    fn rate_limited_after_exhausting_attempts() {
        let (gw, _) = gateway(5, || GatewayError::RateLimited { attempts: 1 }, 3);
        assert!(matches!(gw.chat(&params()), Err(GatewayError::RateLimited { attempts: 3 })));
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let (gw, backend) = gateway(1, || GatewayError::Http { status: 400, body: String::new() }, 3);
        assert!(matches!(gw.chat(&params()), Err(GatewayError::Http { status: 400, .. })));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn invalid_params_and_config() {
        let (gw, _) = gateway(0, || GatewayError::Timeout, 1);
        let mut p = params();
        p.temperature = 2.5;
        assert!(matches!(gw.chat(&p), Err(GatewayError::InvalidParams(_))));
        p.temperature = 0.7;
        p.max_tokens = 0;
        assert!(matches!(gw.chat(&p), Err(GatewayError::InvalidParams(_))));
        assert!(matches!(gw.embed(&[]), Err(GatewayError::EmptyInput)));

        let mut cfg = BackendConfig::new(BackendKind::Http, "m");
        assert!(cfg.validate().is_err());
        cfg.endpoint = Some("http://localhost:1".into());
        cfg.max_concurrency = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn embed_dimension_checked() {
        let (gw, _) = gateway(0, || GatewayError::Timeout, 1);
        assert_eq!(gw.embed(&["a".into(), "b".into()]).unwrap().len(), 2);
        let mut cfg = BackendConfig::new(BackendKind::Mock, "m");
        cfg.embedding_dim = Some(3);
        let gw = Gateway::new(cfg, Arc::new(Flaky { failures: AtomicUsize::new(0), error: || GatewayError::Timeout, calls: AtomicUsize::new(0) })).unwrap();
        assert!(matches!(gw.embed(&["a".into()]), Err(GatewayError::DimensionMismatch { expected: 3, got: 2 })));
    }

    struct Slow {
        in_flight: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Backend for Slow {
        fn complete(&self, _: &str, p: &ChatParams, _: bool) -> Result<Completion, GatewayError> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            Ok(Completion::text(p.user.clone()))
        }
        fn embed(&self, _: &str, _: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
            unreachable!()
        }
    }

    #[test]
    fn at_most_c_requests_in_flight_and_results_keyed_by_request() {
        let backend = Arc::new(Slow { in_flight: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
        let mut cfg = BackendConfig::new(BackendKind::Mock, "m");
        cfg.max_concurrency = 3;
        let gw = Gateway::new(cfg, backend.clone()).unwrap();
        let results: Vec<String> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..24)
                .map(|i| {
                    let gw = &gw;
                    s.spawn(move || {
                        let mut p = params();
                        p.user = format!("req-{i}");
                        gw.chat(&p).unwrap()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(backend.peak.load(Ordering::SeqCst) <= 3);
        assert!(backend.peak.load(Ordering::SeqCst) >= 2);
        for (i, r) in results.iter().enumerate() {
            assert_eq!(r, &format!("req-{i}"));
        }
    }
}
