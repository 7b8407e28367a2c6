//! Chat gateway: request hashing, write-once response cache, retries and
//! the providers behind them (HTTP and scripted mock).

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use chrono::{SecondsFormat, Utc};
use log::{debug, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const API_KEY_ENV: &str = "LLM4VIS_API_KEY";
pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-16k";
pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";
pub const DEFAULT_MAX_TOKENS: u32 = 1024;
pub const DEFAULT_MAX_PROMPT_CHARS: usize = 60_000;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("provider failed after {attempts} attempt(s): {message}")]
    Provider { attempts: u32, message: String },

    #[error("environment variable {API_KEY_ENV} is not set")]
    MissingCredential,

    #[error("mock transcript exhausted at request {digest}")]
    MockExhausted { digest: String },

    #[error("mock transcript has no response for request {digest}")]
    MockUnmatched { digest: String },

    #[error("mock transcript line {line}: {message}")]
    Transcript { line: usize, message: String },

    #[error("cache entry {}: {message}", path.display())]
    Cache { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// Fields are declared in alphabetical order: the derived serialization
/// is the canonical form hashed by [`cache_key`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub content: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub max_tokens: u32,
    pub messages: Vec<ChatMessage>,
    pub model_id: String,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("at least one message is required".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("requests always serialize")
    }
}

/// Model settings applied to every prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Longer prompts are rejected before any call.
    pub max_prompt_chars: usize,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            model_id: DEFAULT_MODEL.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            max_prompt_chars: DEFAULT_MAX_PROMPT_CHARS,
        }
    }
}

impl LlmSettings {
    /// A single-user-message request carrying `prompt`.
    pub fn request(&self, prompt: impl Into<String>) -> ChatRequest {
        ChatRequest {
            max_tokens: self.max_tokens,
            messages: vec![ChatMessage { content: prompt.into(), role: Role::User }],
            model_id: self.model_id.clone(),
            temperature: self.temperature,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub provider_meta: String,
}

impl ChatResponse {
    pub fn new(text: impl Into<String>, finish_reason: FinishReason, provider_meta: impl Into<String>) -> Self {
        let text = text.into();
        let finish_reason = if text.is_empty() { FinishReason::Other } else { finish_reason };
        ChatResponse { text, finish_reason, provider_meta: provider_meta.into() }
    }
}

/// Lowercase hex SHA-256 of a canonical request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn cache_key(req: &ChatRequest) -> CacheKey {
    CacheKey(hex::encode(Sha256::digest(req.canonical_json().as_bytes())))
}

#[derive(Debug)]
pub enum ProviderError {
    /// Transport failure or rate limiting; the gateway retries these.
    Retryable(String),
    Fatal(GatewayError),
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError>;

    /// Whether re-sending an identical request can yield a different answer.
    fn is_live(&self) -> bool {
        false
    }

    /// Upper bound on useful concurrency.
    fn max_parallelism(&self) -> Option<usize> {
        None
    }
}

/// OpenAI-compatible `POST {api_base}/chat/completions`.
pub struct HttpProvider {
    client: reqwest::blocking::Client,
    api_base: String,
    api_key: String,
}

impl HttpProvider {
    pub fn new(api_base: impl Into<String>, api_key: impl Into<String>) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| GatewayError::Provider { attempts: 0, message: e.to_string() })?;
        Ok(HttpProvider { client, api_base: api_base.into().trim_end_matches('/').to_string(), api_key: api_key.into() })
    }

    /// Reads the credential from `LLM4VIS_API_KEY`.
    pub fn from_env(api_base: impl Into<String>) -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()).ok_or(GatewayError::MissingCredential)?;
        Self::new(api_base, key)
    }
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    id: String,
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

impl ChatProvider for HttpProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let body = serde_json::json!({
            "model": req.model_id,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let resp = self
            .client
            .post(format!("{}/chat/completions", self.api_base))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| ProviderError::Retryable(format!("transport error: {e}")))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ProviderError::Retryable(format!("reading response body: {e}")))?;
        if status.as_u16() == 429 {
            return Err(ProviderError::Retryable(format!("rate limited: {text}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Fatal(GatewayError::Provider {
                attempts: 1,
                message: format!("HTTP {status}: {text}"),
            }));
        }
        let wire: WireResponse = serde_json::from_str(&text).map_err(|e| {
            ProviderError::Fatal(GatewayError::Provider { attempts: 1, message: format!("malformed response: {e}") })
        })?;
        let choice = wire.choices.into_iter().next().ok_or_else(|| {
            ProviderError::Fatal(GatewayError::Provider { attempts: 1, message: "response has no choices".into() })
        })?;
        let finish = match choice.finish_reason.as_deref() {
            Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            _ => FinishReason::Other,
        };
        Ok(ChatResponse::new(choice.message.content.unwrap_or_default(), finish, wire.id))
    }

    fn is_live(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "match", rename_all = "lowercase")]
pub enum TranscriptEntry {
    Digest { digest: String, response: String },
    Sequence { response: String },
}

/// Scripted provider. Digest entries answer matching requests any number
/// of times; other requests consume sequence entries in order.
pub struct MockProvider {
    by_digest: HashMap<String, String>,
    sequence: Mutex<VecDeque<String>>,
    scripted_sequence: bool,
}

impl MockProvider {
    pub fn new(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let mut by_digest = HashMap::new();
        let mut sequence = VecDeque::new();
        for e in entries {
            match e {
                TranscriptEntry::Digest { digest, response } => {
                    by_digest.insert(digest.to_ascii_lowercase(), response);
                }
                TranscriptEntry::Sequence { response } => sequence.push_back(response),
            }
        }
        let scripted_sequence = !sequence.is_empty();
        MockProvider { by_digest, sequence: Mutex::new(sequence), scripted_sequence }
    }

    pub fn parse_transcript(text: &str) -> Result<Vec<TranscriptEntry>, GatewayError> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| GatewayError::Transcript { line: i + 1, message: e.to_string() }))
            .collect()
    }

    pub fn from_transcript_file(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| GatewayError::Transcript { line: 0, message: format!("reading {}: {e}", path.display()) })?;
        Ok(Self::new(Self::parse_transcript(&text)?))
    }

    pub fn remaining_sequence(&self) -> usize {
        self.sequence.lock().expect("mock lock").len()
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let digest = cache_key(req).0;
        if let Some(text) = self.by_digest.get(&digest) {
            return Ok(ChatResponse::new(text.clone(), FinishReason::Stop, "mock:digest"));
        }
        match self.sequence.lock().expect("mock lock").pop_front() {
            Some(text) => Ok(ChatResponse::new(text, FinishReason::Stop, "mock:sequence")),
            None if self.scripted_sequence => Err(ProviderError::Fatal(GatewayError::MockExhausted { digest })),
            None => Err(ProviderError::Fatal(GatewayError::MockUnmatched { digest })),
        }
    }

    fn max_parallelism(&self) -> Option<usize> {
        self.scripted_sequence.then_some(1)
    }
}

/// Any provider built from a closure.
pub struct FnProvider<F>(pub F);

impl<F> ChatProvider for FnProvider<F>
where
    F: Fn(&ChatRequest) -> Result<ChatResponse, ProviderError> + Send + Sync,
{
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (self.0)(req)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    request: ChatRequest,
    response: ChatResponse,
    created_at: String,
}

/// Content-addressed, write-once response store: `<dir>/<digest>.json`.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| GatewayError::Cache { path: dir.clone(), message: e.to_string() })?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &CacheKey, req: &ChatRequest) -> Result<Option<ChatResponse>, GatewayError> {
        let path = self.path_for(key);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Cache { path, message: e.to_string() }),
        };
        let record: CacheRecord =
            serde_json::from_str(&text).map_err(|e| GatewayError::Cache { path: path.clone(), message: e.to_string() })?;
        if record.request != *req {
            return Err(GatewayError::Cache { path, message: "stored request differs from the requested one".into() });
        }
        Ok(Some(record.response))
    }

    /// Stores `resp` unless the key already exists; returns the value that
    /// ends up stored.
    pub fn put(&self, key: &CacheKey, req: &ChatRequest, resp: &ChatResponse) -> Result<ChatResponse, GatewayError> {
        let path = self.path_for(key);
        let err = |message: String| GatewayError::Cache { path: path.clone(), message };
        let record = CacheRecord {
            request: req.clone(),
            response: resp.clone(),
            created_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| err(e.to_string()))?;
        serde_json::to_writer_pretty(&mut tmp, &record).map_err(|e| err(e.to_string()))?;
        tmp.write_all(b"\n").map_err(|e| err(e.to_string()))?;
        match tmp.persist_noclobber(&path) {
            Ok(_) => Ok(resp.clone()),
            Err(e) if e.error.kind() == ErrorKind::AlreadyExists => {
                debug!("cache entry {key} already written by a concurrent caller");
                self.get(key, req)?.ok_or_else(|| err("entry vanished after a concurrent write".into()))
            }
            Err(e) => Err(err(e.error.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 2, base_delay: Duration::from_secs(1) }
    }
}

pub struct Gateway {
    provider: Box<dyn ChatProvider>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    provider_calls: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl Gateway {
    pub fn new(provider: Box<dyn ChatProvider>, cache: Option<ResponseCache>) -> Self {
        Gateway { provider, cache, retry: RetryPolicy::default(), provider_calls: AtomicUsize::new(0), cache_hits: AtomicUsize::new(0) }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn mock(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        Self::new(Box::new(MockProvider::new(entries)), None)
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<ChatResponse, ProviderError> + Send + Sync + 'static,
    {
        Self::new(Box::new(FnProvider(f)), None)
    }

    /// Number of provider attempts so far, retries included.
    pub fn provider_calls(&self) -> usize {
        self.provider_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::SeqCst)
    }

    /// True when re-sending an identical request can change the answer.
    pub fn can_resample(&self) -> bool {
        self.cache.is_none() && self.provider.is_live()
    }

    /// Parallelism capped by what the provider supports.
    pub fn effective_parallelism(&self, requested: usize) -> usize {
        let requested = requested.max(1);
        self.provider.max_parallelism().map_or(requested, |cap| requested.min(cap))
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let key = cache_key(req);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key, req)? {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(hit);
            }
        }
        let resp = self.call_with_retry(req)?;
        match &self.cache {
            Some(cache) => cache.put(&key, req, &resp),
            None => Ok(resp),
        }
    }

    fn call_with_retry(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.provider_calls.fetch_add(1, Ordering::SeqCst);
            match self.provider.complete(req) {
                Ok(resp) => return Ok(resp),
                Err(ProviderError::Fatal(e)) => return Err(e),
                Err(ProviderError::Retryable(message)) => {
                    if attempt > self.retry.max_retries {
                        return Err(GatewayError::Provider { attempts: attempt, message });
                    }
                    let delay = self.retry.base_delay * 2u32.saturating_pow(attempt - 1);
                    warn!("provider attempt {attempt} failed ({message}); retrying in {delay:?}");
                    thread::sleep(delay);
                }
            }
        }
    }
}
