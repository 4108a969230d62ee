//! Uniform access to the vision-language and language models.
//!
//! A [`Gateway`] wraps one [`Backend`] and adds a content-addressed response
//! cache (memory plus an optional directory, one file per request key),
//! single-flight deduplication of identical in-flight requests, a cap on
//! concurrent backend calls, bounded retries with exponential backoff, and
//! optional transcript recording.
//!
//! Backends: [`live::HttpBackend`] (chat-completion HTTP), [`ReplayBackend`]
//! (answers only from a recorded transcript) and [`mock::ScriptedBackend`]
//! (rule-driven responses for tests and offline runs).

mod limit;
pub mod live;
pub mod mock;
mod transcript;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::digest::Digest;
use crate::fsutil;
use limit::Semaphore;

pub use live::{EndpointConfig, HttpBackend, LiveConfig};
pub use mock::{FnBackend, Rule, Script, ScriptedBackend, ScriptedError};
pub use transcript::{ReplayBackend, Transcript, TranscriptEntry, TRANSCRIPT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Vlm,
    Llm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Vlm => "vlm",
            ModelKind::Llm => "llm",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            temperature: 0.0,
            max_tokens: 1024,
            seed: None,
        }
    }
}

#[derive(Clone, PartialEq)]
pub struct ModelRequest {
    pub kind: ModelKind,
    pub model_id: String,
    pub prompt: String,
    pub image_hash: Option<Digest>,
    pub image_bytes: Option<Arc<Vec<u8>>>,
    pub sampling: Sampling,
}

impl fmt::Debug for ModelRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelRequest")
            .field("kind", &self.kind)
            .field("model_id", &self.model_id)
            .field("prompt_len", &self.prompt.len())
            .field("image_hash", &self.image_hash)
            .field("image_len", &self.image_bytes.as_ref().map(|b| b.len()))
            .field("sampling", &self.sampling)
            .finish()
    }
}

/// Canonical form hashed into the request key. The image enters only by
/// its content hash, so cached answers survive moving files around.
#[derive(Serialize)]
struct CanonicalRequest<'a> {
    kind: ModelKind,
    model_id: &'a str,
    prompt: &'a str,
    image_hash: Option<String>,
    sampling: &'a Sampling,
}

impl ModelRequest {
    pub fn vlm(
        model_id: impl Into<String>,
        prompt: impl Into<String>,
        image_hash: Digest,
        image_bytes: Arc<Vec<u8>>,
        sampling: Sampling,
    ) -> Self {
        ModelRequest {
            kind: ModelKind::Vlm,
            model_id: model_id.into(),
            prompt: prompt.into(),
            image_hash: Some(image_hash),
            image_bytes: Some(image_bytes),
            sampling,
        }
    }

    pub fn llm(model_id: impl Into<String>, prompt: impl Into<String>, sampling: Sampling) -> Self {
        ModelRequest {
            kind: ModelKind::Llm,
            model_id: model_id.into(),
            prompt: prompt.into(),
            image_hash: None,
            image_bytes: None,
            sampling,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let has_image = self.image_hash.is_some() && self.image_bytes.is_some();
        let no_image = self.image_hash.is_none() && self.image_bytes.is_none();
        match self.kind {
            ModelKind::Vlm if !has_image => Err(GatewayError::InvalidRequest(
                "vlm request without image".into(),
            )),
            ModelKind::Llm if !no_image => Err(GatewayError::InvalidRequest(
                "llm request must not carry an image".into(),
            )),
            _ if !(self.sampling.temperature >= 0.0) => Err(GatewayError::InvalidRequest(
                "temperature must be non-negative".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&CanonicalRequest {
            kind: self.kind,
            model_id: &self.model_id,
            prompt: &self.prompt,
            image_hash: self.image_hash.map(|h| h.to_hex()),
            sampling: &self.sampling,
        })
        .expect("canonical request serializes")
    }

    pub fn key(&self) -> Digest {
        Digest::of(&self.canonical_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse {
    pub text: String,
    pub model_id: String,
    pub cached: bool,
    pub latency: Duration,
    pub request_key: Digest,
    /// Backend attempts made for this call (0 on a cache hit).
    pub attempts: u32,
}

/// Failure reported by a backend for a single attempt.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("server error {status}: {message}")]
    Server { status: u16, message: String },
    #[error("request rejected ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("no transcript entry for request {0}")]
    ReplayMiss(Digest),
    #[error("prompt of ~{tokens} tokens exceeds budget {budget}")]
    Oversized { tokens: usize, budget: usize },
    #[error("backend has no {0} model configured")]
    Unsupported(ModelKind),
}

impl BackendError {
    /// Transport failures, 5xx and rate limits are retried; other client
    /// errors are not.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Unreachable(_) | BackendError::RateLimited { .. } | BackendError::Server { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("backend unreachable after {attempts} attempts: {message}")]
    BackendUnreachable { attempts: u32, message: String },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request rejected ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("replay miss: no transcript entry for request_key {0}")]
    ReplayMiss(Digest),
    #[error("oversized prompt: ~{tokens} tokens exceeds budget {budget}")]
    OversizedPrompt { tokens: usize, budget: usize },
    #[error("backend has no {0} model configured")]
    Unsupported(ModelKind),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache: {0}")]
    Cache(String),
}

impl GatewayError {
    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::BackendUnreachable { .. } => "backend_unreachable",
            GatewayError::RateLimited { .. } => "rate_limited",
            GatewayError::Rejected { .. } => "rejected",
            GatewayError::ReplayMiss(_) => "replay_miss",
            GatewayError::OversizedPrompt { .. } => "oversized_prompt",
            GatewayError::Unsupported(_) => "unsupported",
            GatewayError::InvalidRequest(_) => "invalid_request",
            GatewayError::Cache(_) => "cache",
        }
    }
}

/// Rough token estimate: one token per four characters.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    /// Model identifier used in requests of this kind.
    fn model_id(&self, kind: ModelKind) -> String;

    /// Prompt budget in estimated tokens, if the backend declares one.
    fn prompt_budget(&self, _kind: ModelKind) -> Option<usize> {
        None
    }

    fn call(&self, request: &ModelRequest) -> Result<String, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn model_id(&self, kind: ModelKind) -> String {
        (**self).model_id(kind)
    }
    fn prompt_budget(&self, kind: ModelKind) -> Option<usize> {
        (**self).prompt_budget(kind)
    }
    fn call(&self, request: &ModelRequest) -> Result<String, BackendError> {
        (**self).call(request)
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Maximum concurrent backend calls.
    pub max_concurrency: usize,
    /// Maximum backend attempts per request.
    pub max_attempts: u32,
    pub base_backoff: Duration,
    pub max_backoff: Duration,
    pub sampling: Sampling,
    pub cache_dir: Option<PathBuf>,
    pub record: bool,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            max_concurrency: 8,
            max_attempts: 5,
            base_backoff: Duration::from_secs(1),
            max_backoff: Duration::from_secs(60),
            sampling: Sampling::default(),
            cache_dir: None,
            record: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GatewayStats {
    pub requests: u64,
    pub cache_hits: u64,
    pub backend_calls: u64,
    pub attempts: u64,
}

type Slot = Arc<Mutex<Option<String>>>;

#[derive(Default)]
struct Recorder {
    keys: HashSet<Digest>,
    entries: Vec<TranscriptEntry>,
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    config: GatewayConfig,
    slots: Mutex<HashMap<Digest, Slot>>,
    limiter: Semaphore,
    recorder: Option<Mutex<Recorder>>,
    requests: AtomicU64,
    cache_hits: AtomicU64,
    backend_calls: AtomicU64,
    attempts: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, config: GatewayConfig) -> Self {
        let limiter = Semaphore::new(config.max_concurrency.max(1));
        let recorder = config.record.then(|| Mutex::new(Recorder::default()));
        Gateway {
            backend,
            config,
            slots: Mutex::new(HashMap::new()),
            limiter,
            recorder,
            requests: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            backend_calls: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn model_id(&self, kind: ModelKind) -> String {
        self.backend.model_id(kind)
    }

    pub fn prompt_budget(&self, kind: ModelKind) -> Option<usize> {
        self.backend.prompt_budget(kind)
    }

    pub fn max_concurrency(&self) -> usize {
        self.config.max_concurrency.max(1)
    }

    pub fn vlm_request(&self, prompt: String, image_hash: Digest, bytes: Arc<Vec<u8>>) -> ModelRequest {
        ModelRequest::vlm(
            self.model_id(ModelKind::Vlm),
            prompt,
            image_hash,
            bytes,
            self.config.sampling.clone(),
        )
    }

    pub fn llm_request(&self, prompt: String) -> ModelRequest {
        ModelRequest::llm(self.model_id(ModelKind::Llm), prompt, self.config.sampling.clone())
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            requests: self.requests.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            backend_calls: self.backend_calls.load(Ordering::Relaxed),
            attempts: self.attempts.load(Ordering::Relaxed),
        }
    }

    /// Snapshot of everything completed so far (recording must be enabled).
    pub fn transcript(&self) -> Option<Transcript> {
        let rec = self.recorder.as_ref()?.lock().unwrap();
        Some(Transcript::from_entries(rec.entries.clone()))
    }

    fn cache_path(&self, key: &Digest) -> Option<PathBuf> {
        self.config.cache_dir.as_ref().map(|d| d.join(key.to_hex()))
    }

    fn slot(&self, key: Digest) -> Slot {
        self.slots.lock().unwrap().entry(key).or_default().clone()
    }

    pub fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        request.validate()?;
        let start = Instant::now();
        let key = request.key();
        self.requests.fetch_add(1, Ordering::Relaxed);

        if let Some(budget) = self.backend.prompt_budget(request.kind) {
            let tokens = estimate_tokens(&request.prompt);
            if tokens > budget {
                return Err(GatewayError::OversizedPrompt { tokens, budget });
            }
        }

        // Holding the per-key slot lock for the whole miss path makes
        // concurrent identical requests wait for one backend call.
        let slot = self.slot(key);
        let mut guard = slot.lock().unwrap_or_else(|p| p.into_inner());

        let mut cached = true;
        let mut attempts = 0;
        if guard.is_none() {
            if let Some(text) = self.read_disk(&key) {
                *guard = Some(text);
            }
        }
        let text = match guard.as_ref() {
            Some(text) => {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                text.clone()
            }
            None => {
                cached = false;
                let (result, n) = self.call_with_retry(request, &key);
                attempts = n;
                let text = result?;
                self.write_disk(&key, &text)?;
                *guard = Some(text.clone());
                text
            }
        };
        drop(guard);

        if let Some(rec) = &self.recorder {
            let mut rec = rec.lock().unwrap();
            if rec.keys.insert(key) {
                rec.entries.push(TranscriptEntry::new(key, request, &text));
            }
        }

        Ok(ModelResponse {
            text,
            model_id: request.model_id.clone(),
            cached,
            latency: start.elapsed(),
            request_key: key,
            attempts,
        })
    }

    fn read_disk(&self, key: &Digest) -> Option<String> {
        let path = self.cache_path(key)?;
        std::fs::read_to_string(path).ok()
    }

    fn write_disk(&self, key: &Digest, text: &str) -> Result<(), GatewayError> {
        if let Some(path) = self.cache_path(key) {
            fsutil::write_atomic(&path, text.as_bytes())
                .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.saturating_sub(1));
        self.config
            .base_backoff
            .saturating_mul(factor)
            .min(self.config.max_backoff)
    }

    fn call_with_retry(&self, request: &ModelRequest, key: &Digest) -> (Result<String, GatewayError>, u32) {
        let max = self.config.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.attempts.fetch_add(1, Ordering::Relaxed);
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            let outcome = {
                let _permit = self.limiter.acquire();
                self.backend.call(request)
            };
            let err = match outcome {
                Ok(text) => {
                    debug!(key = %key.short(), attempt, "backend call succeeded");
                    return (Ok(text), attempt);
                }
                Err(e) => e,
            };
            if !err.is_retryable() || attempt >= max {
                warn!(key = %key.short(), attempt, error = %err, "backend call failed");
                return (Err(final_error(err, attempt)), attempt);
            }
            let mut wait = self.backoff(attempt);
            if let BackendError::RateLimited { retry_after: Some(after) } = &err {
                wait = wait.max(*after).min(self.config.max_backoff);
            }
            warn!(key = %key.short(), attempt, max, error = %err, ?wait, "retrying backend call");
            std::thread::sleep(wait);
        }
    }
}

fn final_error(err: BackendError, attempts: u32) -> GatewayError {
    match err {
        BackendError::Unreachable(message) => GatewayError::BackendUnreachable { attempts, message },
        BackendError::Server { status, message } => GatewayError::BackendUnreachable {
            attempts,
            message: format!("server error {status}: {message}"),
        },
        BackendError::RateLimited { .. } => GatewayError::RateLimited { attempts },
        BackendError::Rejected { status, message } => GatewayError::Rejected { status, message },
        BackendError::ReplayMiss(key) => GatewayError::ReplayMiss(key),
        BackendError::Oversized { tokens, budget } => GatewayError::OversizedPrompt { tokens, budget },
        BackendError::Unsupported(kind) => GatewayError::Unsupported(kind),
    }
}
