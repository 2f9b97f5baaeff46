//! Client side of the evaluation: endpoint configuration, frame sampling,
//! request construction, and cached querying of OpenAI-compatible chat
//! completion endpoints.
//!
//! The pieces are deliberately separable: [`plan_frame_indices`] and
//! [`build_inference_request`] are pure, the [`Transport`](transport::Transport)
//! trait isolates actual HTTP so tests can script every response, and
//! [`QueryRunner`] layers retries, a disk cache and a concurrency limiter on
//! top of whichever transport it is given.

pub mod cache;
pub mod frames;
pub mod transport;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Question;
use crate::error::{Error, Result};

pub use cache::ResponseCache;
pub use frames::{FramePayload, FrameSource, TINY_PNG};
pub use transport::{ChatRequest, HttpTransport, ScriptedTransport, Transport, TransportFault};

/// Default instruction appended to the question under chain-of-thought
/// prompting. Overridable per run via [`SamplingConfig::cot_suffix`].
pub const DEFAULT_COT_SUFFIX: &str = "Let's think step by step, then give your final answer.";

/// Upper bound on the summed frame payload bytes of a single request.
/// Exceeding it fails *before* any network traffic.
pub const DEFAULT_REQUEST_BYTE_CAP: usize = 20 * 1024 * 1024;

/// One OpenAI-compatible endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// Base URL up to (not including) `/chat/completions`.
    pub base_url: String,
    /// Name of the environment variable holding the bearer token. The key
    /// itself never appears in config files.
    pub api_key_env: String,
    pub model_name: String,
    /// Maximum number of requests in flight at once.
    pub max_concurrency: usize,
    /// Per-request timeout in seconds.
    pub timeout_s: f64,
    /// Retry budget for transient failures; total attempts = 1 + max_retries.
    pub max_retries: u32,
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_url.trim().is_empty() {
            return Err(Error::Config("endpoint base_url is empty".into()));
        }
        if self.model_name.trim().is_empty() {
            return Err(Error::Config("endpoint model_name is empty".into()));
        }
        if self.max_concurrency < 1 {
            return Err(Error::Config(format!(
                "max_concurrency must be >= 1, got {}",
                self.max_concurrency
            )));
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(Error::Config(format!(
                "timeout_s must be positive, got {}",
                self.timeout_s
            )));
        }
        Ok(())
    }

    /// True for the built-in scripted endpoints (`mock:` scheme) that need
    /// no credentials or network.
    pub fn is_mock(&self) -> bool {
        self.base_url.starts_with("mock:")
    }

    /// Reads the bearer token from the configured environment variable.
    /// Called once at startup so a bad variable name fails fast.
    pub fn resolve_api_key(&self) -> Result<String> {
        std::env::var(&self.api_key_env).map_err(|_| Error::MissingApiKey(self.api_key_env.clone()))
    }
}

/// How the model is prompted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// Question only; the reply is judged as-is.
    Direct,
    /// Question plus a think-step-by-step suffix; multiple-choice and
    /// yes/no replies go through answer extraction before judging.
    Cot,
}

/// Frame sampling and prompting parameters for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Number of frames sampled per video.
    pub n_frames: u32,
    /// Long-edge resize applied by the frame extractor, if any.
    #[serde(default)]
    pub resize_long_edge_px: Option<u32>,
    pub prompt_mode: PromptMode,
    /// Override of [`DEFAULT_COT_SUFFIX`]. Ignored in direct mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cot_suffix: Option<String>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            n_frames: 8,
            resize_long_edge_px: None,
            prompt_mode: PromptMode::Direct,
            cot_suffix: None,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 1 {
            return Err(Error::Config("n_frames must be >= 1".into()));
        }
        if let Some(px) = self.resize_long_edge_px {
            if px == 0 {
                return Err(Error::Config("resize_long_edge_px must be positive".into()));
            }
        }
        Ok(())
    }

    /// The chain-of-thought suffix in effect.
    pub fn effective_cot_suffix(&self) -> &str {
        self.cot_suffix.as_deref().unwrap_or(DEFAULT_COT_SUFFIX)
    }

    /// Content digest of every parameter that shapes the request. Part of
    /// the cache key, so changing any of them invalidates cached responses.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"sampling-v1\0");
        hasher.update(self.n_frames.to_le_bytes());
        match self.resize_long_edge_px {
            Some(px) => {
                hasher.update([1u8]);
                hasher.update(px.to_le_bytes());
            }
            None => hasher.update([0u8; 5]),
        }
        match self.prompt_mode {
            PromptMode::Direct => hasher.update(b"direct\0"),
            PromptMode::Cot => {
                hasher.update(b"cot\0");
                hasher.update(self.effective_cot_suffix().as_bytes());
            }
        }
        hex::encode(&hasher.finalize()[..16])
    }
}

/// Uniform-midpoint frame sampling: index i of n is
/// `floor((i + 0.5) * total / n)`, deduplicated and ascending.
///
/// Computed in integer arithmetic (`(2i+1)*total / (2n)`) so results carry
/// no float rounding. Output length is `min(n, total)` in practice: indices
/// are strictly increasing while `total >= n` and collapse onto all of
/// `0..total` when `n >= total`.
pub fn plan_frame_indices(total_frames: u64, n_frames: u32) -> Result<Vec<u64>> {
    if total_frames < 1 {
        return Err(Error::Argument("total_frames must be >= 1".into()));
    }
    if n_frames < 1 {
        return Err(Error::Argument("n_frames must be >= 1".into()));
    }
    let n = n_frames as u64;
    let mut out = Vec::with_capacity(n_frames as usize);
    for i in 0..n {
        let idx = (2 * i + 1) * total_frames / (2 * n);
        if out.last() != Some(&idx) {
            out.push(idx);
        }
    }
    Ok(out)
}

/// A model response retrieved through [`QueryRunner::cached_query`],
/// persisted verbatim in the response cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub question_id: String,
    pub model_name: String,
    pub sampling_digest: String,
    pub response_text: String,
    pub latency_ms: u64,
    /// Unix timestamp (seconds) of when the response was first obtained.
    pub created_at: u64,
}

/// Builds the chat-completions request for one question: all sampled frame
/// payloads as data-URL image parts in index order, followed by a single
/// text part, at temperature 0.
///
/// Fails with [`Error::RequestTooLarge`] before any network call when the
/// summed payload bytes exceed `byte_cap`.
pub fn build_inference_request(
    question: &Question,
    frames: &[FramePayload],
    sampling: &SamplingConfig,
    model_name: &str,
    byte_cap: usize,
) -> Result<ChatRequest> {
    if frames.is_empty() {
        return Err(Error::Argument(format!(
            "question {}: no frame payloads supplied",
            question.id
        )));
    }
    let total: usize = frames.iter().map(|f| f.bytes.len()).sum();
    if total > byte_cap {
        return Err(Error::RequestTooLarge {
            bytes: total,
            cap: byte_cap,
        });
    }
    let text = match sampling.prompt_mode {
        PromptMode::Direct => question.text.clone(),
        PromptMode::Cot => format!("{}\n{}", question.text, sampling.effective_cot_suffix()),
    };
    Ok(ChatRequest::with_images(model_name, frames, &text))
}

// ---------------------------------------------------------------------------
// Concurrency limiter
// ---------------------------------------------------------------------------

/// Counting semaphore bounding in-flight transport calls. One limiter is
/// shared by the model and judge clients of a run so their combined traffic
/// respects the configured cap.
pub struct Limiter {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Limiter {
    pub fn new(permits: usize) -> Arc<Self> {
        assert!(permits >= 1, "limiter needs at least one permit");
        Arc::new(Limiter {
            permits: Mutex::new(permits),
            available: Condvar::new(),
        })
    }

    pub fn acquire(self: &Arc<Self>) -> LimiterGuard {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        LimiterGuard {
            limiter: Arc::clone(self),
        }
    }
}

/// RAII permit; dropping it releases the slot.
pub struct LimiterGuard {
    limiter: Arc<Limiter>,
}

impl Drop for LimiterGuard {
    fn drop(&mut self) {
        let mut permits = self.limiter.permits.lock().unwrap();
        *permits += 1;
        self.limiter.available.notify_one();
    }
}

/// Injectable backoff sleeper; tests swap in a no-op.
pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

struct RealSleeper;

impl Sleeper for RealSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// No-delay sleeper for tests.
pub struct NoSleep;

impl Sleeper for NoSleep {
    fn sleep(&self, _: Duration) {}
}

/// Exponential backoff schedule: 200ms, 400ms, 800ms, ... capped at 5s.
fn backoff_delay(retry: u32) -> Duration {
    let ms = 200u64.saturating_mul(1 << retry.min(10));
    Duration::from_millis(ms.min(5_000))
}

// ---------------------------------------------------------------------------
// Cached querying
// ---------------------------------------------------------------------------

/// Outcome of a cached query, including how it was satisfied.
#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub record: InferenceRecord,
    /// Transport attempts made; 0 on a cache hit.
    pub attempts: u32,
    pub cache_hit: bool,
}

/// Runs requests against a transport with retries, a response cache, and a
/// shared concurrency limiter.
pub struct QueryRunner {
    transport: Arc<dyn Transport>,
    cache: Arc<ResponseCache>,
    limiter: Arc<Limiter>,
    sleeper: Arc<dyn Sleeper>,
    max_retries: u32,
}

impl QueryRunner {
    pub fn new(
        transport: Arc<dyn Transport>,
        cache: Arc<ResponseCache>,
        limiter: Arc<Limiter>,
        max_retries: u32,
    ) -> Self {
        QueryRunner {
            transport,
            cache,
            limiter,
            sleeper: Arc::new(RealSleeper),
            max_retries,
        }
    }

    /// Replaces the backoff sleeper (tests use [`NoSleep`]).
    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    /// Returns the cached response for `(model, question, digest)` if
    /// present, otherwise sends the request — retrying transient failures
    /// with exponential backoff — and persists the response.
    ///
    /// Idempotent: repeating a completed query never rewrites cache state.
    pub fn cached_query(
        &self,
        model_name: &str,
        question_id: &str,
        sampling_digest: &str,
        request: &ChatRequest,
    ) -> Result<QueryOutcome> {
        if let Some(record) = self.cache.get(model_name, question_id, sampling_digest) {
            return Ok(QueryOutcome {
                record,
                attempts: 0,
                cache_hit: true,
            });
        }

        let _permit = self.limiter.acquire();
        // Guard against a racing worker having filled the cache while we
        // waited for a permit.
        if let Some(record) = self.cache.get(model_name, question_id, sampling_digest) {
            return Ok(QueryOutcome {
                record,
                attempts: 0,
                cache_hit: true,
            });
        }

        let started = std::time::Instant::now();
        let mut attempts = 0u32;
        let response_text = loop {
            attempts += 1;
            match self.transport.send(request) {
                Ok(text) => break text,
                Err(fault) => {
                    if !fault.is_retryable() {
                        return Err(Error::Permanent {
                            status: fault.status().unwrap_or(0),
                            attempts,
                            message: fault.to_string(),
                        });
                    }
                    if attempts > self.max_retries {
                        return Err(Error::RetriesExhausted {
                            attempts,
                            message: fault.to_string(),
                        });
                    }
                    self.sleeper.sleep(backoff_delay(attempts - 1));
                }
            }
        };

        let record = InferenceRecord {
            question_id: question_id.to_string(),
            model_name: model_name.to_string(),
            sampling_digest: sampling_digest.to_string(),
            response_text,
            latency_ms: started.elapsed().as_millis() as u64,
            created_at: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        self.cache.store(&record)?;
        Ok(QueryOutcome {
            record,
            attempts,
            cache_hit: false,
        })
    }
}

/// Applies `f` to every item on a pool of `workers` threads, preserving
/// input order in the returned vector.
pub fn for_each_parallel<T, R, F>(items: Vec<T>, workers: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let workers = workers.max(1);
    let n = items.len();
    let slots: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let queue: Vec<Mutex<Option<T>>> = items.into_iter().map(|t| Mutex::new(Some(t))).collect();
    let next = AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..workers.min(n.max(1)) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= n {
                    break;
                }
                let item = queue[idx].lock().unwrap().take().expect("item taken once");
                let result = f(item);
                *slots[idx].lock().unwrap() = Some(result);
            });
        }
    });

    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker filled every slot"))
        .collect()
}
