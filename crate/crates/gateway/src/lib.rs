//! Chat-completion gateway with content-addressed caching.
//!
//! Every request is keyed by [`ChatRequest::prompt_hash`]. Responses are
//! appended to `transcripts.jsonl` in the cache directory and served from
//! there on later runs, so a run recorded once can be replayed without any
//! network access.

mod request;
mod transcript;
mod transport;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use request::{parse_response_body, request_body, ChatRequest, Message, ResponseFormat, Role};
pub use transcript::{
    load_transcript_file, load_transcripts, LoadMode, LoadReport, PersistenceError,
    TranscriptEntry, TranscriptLog, TRANSCRIPT_FILE,
};
pub use transport::{
    ChatTransport, HttpTransport, TransportError, TransportReply, API_KEY_VAR, BASE_URL_VAR,
    DEFAULT_BASE_URL, ORGANIZATION_VAR,
};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("replay cache has no response for prompt {prompt_hash}")]
    ReplayMiss { prompt_hash: String },
    #[error("upstream unavailable after {attempts} attempts (last status {last_status:?}): {detail}")]
    UpstreamUnavailable { attempts: u32, last_status: Option<u16>, detail: String },
    #[error("upstream rejected request with status {status}: {body}")]
    UpstreamRejected { status: u16, body: String },
    #[error("malformed upstream response: {0}")]
    MalformedResponse(String),
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("no transport configured for a network call")]
    NoTransport,
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Always call upstream; still records transcripts.
    Live,
    /// Serve hits from the cache, call upstream on a miss.
    CacheFirst,
    /// Serve hits from the cache, fail on a miss. Never touches the network.
    ReplayOnly,
}

impl std::str::FromStr for CacheMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(CacheMode::Live),
            "cache_first" => Ok(CacheMode::CacheFirst),
            "replay_only" => Ok(CacheMode::ReplayOnly),
            other => Err(format!("unknown cache mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachePolicy {
    pub mode: CacheMode,
    pub cache_dir: PathBuf,
}

/// Exponential backoff: attempt `n` (1-based) waits `base * factor^(n-1)`
/// before attempt `n + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 5, base_delay: Duration::from_secs(1), factor: 2.0 }
    }
}

impl RetryPolicy {
    pub fn delay_after(&self, attempt: u32) -> Duration {
        self.base_delay.mul_f64(self.factor.powi(attempt.saturating_sub(1) as i32))
    }
}

fn is_retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

pub struct Gateway {
    policy: CachePolicy,
    retry: RetryPolicy,
    transport: Option<Box<dyn ChatTransport>>,
    cache: RwLock<HashMap<String, TranscriptEntry>>,
    store: TranscriptLog,
    session: Option<TranscriptLog>,
}

impl Gateway {
    /// Opens the cache directory and indexes every stored transcript.
    ///
    /// `transport` may be `None` only in replay-only mode; a network call
    /// attempted without one fails with [`GatewayError::NoTransport`].
    pub fn open(
        policy: CachePolicy,
        transport: Option<Box<dyn ChatTransport>>,
        retry: RetryPolicy,
    ) -> Result<Self, GatewayError> {
        std::fs::create_dir_all(&policy.cache_dir).map_err(PersistenceError::from)?;
        let loaded = load_transcripts(&policy.cache_dir, LoadMode::Strict)?;
        let mut index = HashMap::new();
        for entry in loaded.entries {
            // first recorded response wins
            index.entry(entry.prompt_hash.clone()).or_insert(entry);
        }
        let store = TranscriptLog::open(policy.cache_dir.join(TRANSCRIPT_FILE))?;
        Ok(Self { policy, retry, transport, cache: RwLock::new(index), store, session: None })
    }

    /// Additionally records every served exchange (hit or miss) to `path`.
    pub fn with_session_log(mut self, path: &Path) -> Result<Self, GatewayError> {
        if path != self.store.path() {
            self.session = Some(TranscriptLog::open(path)?);
        }
        Ok(self)
    }

    pub fn policy(&self) -> &CachePolicy {
        &self.policy
    }

    pub fn cached_entries(&self) -> usize {
        self.cache.read().expect("cache poisoned").len()
    }

    pub fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        req.validate()?;
        let hash = req.prompt_hash();
        if self.policy.mode != CacheMode::Live {
            let hit = self.cache.read().expect("cache poisoned").get(&hash).cloned();
            if let Some(entry) = hit {
                self.record_session(&entry)?;
                return Ok(entry.response_text);
            }
            if self.policy.mode == CacheMode::ReplayOnly {
                return Err(GatewayError::ReplayMiss { prompt_hash: hash });
            }
        }
        let entry = self.call_upstream(req)?;
        self.store.append(&entry)?;
        self.record_session(&entry)?;
        let text = entry.response_text.clone();
        self.cache.write().expect("cache poisoned").entry(hash).or_insert(entry);
        Ok(text)
    }

    fn record_session(&self, entry: &TranscriptEntry) -> Result<(), GatewayError> {
        if let Some(session) = &self.session {
            session.append(entry)?;
        }
        Ok(())
    }

    fn call_upstream(&self, req: &ChatRequest) -> Result<TranscriptEntry, GatewayError> {
        let transport = self.transport.as_ref().ok_or(GatewayError::NoTransport)?;
        let mut last_status = None;
        let mut detail = String::new();
        for attempt in 1..=self.retry.max_attempts {
            let started = Instant::now();
            match transport.send(req) {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    let (text, usage) = parse_response_body(&reply.body)?;
                    let mut entry = TranscriptEntry::new(
                        req.clone(),
                        text,
                        started.elapsed().as_millis() as u64,
                        attempt,
                    );
                    entry.usage = usage;
                    return Ok(entry);
                }
                Ok(reply) if is_retryable(reply.status) => {
                    log::warn!(
                        "[{}] upstream status {} on attempt {attempt}",
                        req.request_tag,
                        reply.status
                    );
                    last_status = Some(reply.status);
                    detail = reply.body;
                }
                Ok(reply) => {
                    return Err(GatewayError::UpstreamRejected {
                        status: reply.status,
                        body: reply.body,
                    })
                }
                Err(e) => {
                    log::warn!("[{}] {e} on attempt {attempt}", req.request_tag);
                    detail = e.to_string();
                }
            }
            if attempt < self.retry.max_attempts {
                std::thread::sleep(self.retry.delay_after(attempt));
            }
        }
        Err(GatewayError::UpstreamUnavailable {
            attempts: self.retry.max_attempts,
            last_status,
            detail,
        })
    }
}
