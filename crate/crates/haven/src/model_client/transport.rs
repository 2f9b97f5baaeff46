//! Wire types and the transport abstraction.
//!
//! Everything above this layer works in terms of [`ChatRequest`] and plain
//! response strings. [`HttpTransport`] talks to real OpenAI-compatible
//! endpoints; [`ScriptedTransport`] plays back canned outcomes and keeps
//! instrumentation counters, which is what every test uses.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::frames::FramePayload;

/// Chat-completions request body. Field set is the minimal OpenAI-compatible
/// core: model, messages, temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: MessageContent,
}

/// Either a bare string (text-only requests) or a list of typed parts
/// (image + text requests).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MessageContent {
    Text(String),
    Parts(Vec<ContentPart>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    ImageUrl { image_url: ImageUrl },
    Text { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

impl ChatRequest {
    /// Single user message with image parts (in the given order) followed by
    /// one text part; temperature 0.
    pub fn with_images(model: &str, frames: &[FramePayload], text: &str) -> Self {
        use base64::Engine as _;
        let engine = base64::engine::general_purpose::STANDARD;
        let mut parts: Vec<ContentPart> = frames
            .iter()
            .map(|f| ContentPart::ImageUrl {
                image_url: ImageUrl {
                    url: format!("data:{};base64,{}", f.mime, engine.encode(&f.bytes)),
                },
            })
            .collect();
        parts.push(ContentPart::Text {
            text: text.to_string(),
        });
        ChatRequest {
            model: model.to_string(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: MessageContent::Parts(parts),
            }],
            temperature: 0.0,
        }
    }

    /// Single text-only user message; temperature 0. Used for judge calls.
    pub fn text_only(model: &str, text: &str) -> Self {
        ChatRequest {
            model: model.to_string(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: MessageContent::Text(text.to_string()),
            }],
            temperature: 0.0,
        }
    }

    /// The text of the last text part (or bare-string content) of the last
    /// message. Scripted transports key their playback off this.
    pub fn last_text(&self) -> Option<&str> {
        let msg = self.messages.last()?;
        match &msg.content {
            MessageContent::Text(t) => Some(t),
            MessageContent::Parts(parts) => parts.iter().rev().find_map(|p| match p {
                ContentPart::Text { text } => Some(text.as_str()),
                _ => None,
            }),
        }
    }
}

/// Transport-level failure, classified for the retry loop.
#[derive(Debug, Clone, thiserror::Error)]
pub enum TransportFault {
    /// Endpoint answered with a non-2xx status.
    #[error("http {status}: {body}")]
    Http { status: u16, body: String },
    /// The request deadline elapsed.
    #[error("timeout: {0}")]
    Timeout(String),
    /// Connection-level failure (DNS, refused, reset, ...).
    #[error("connection: {0}")]
    Connection(String),
    /// 2xx reply whose body was not a parseable chat completion.
    #[error("malformed response body: {0}")]
    Malformed(String),
}

impl TransportFault {
    /// Retry policy: server-side failures, timeouts, connection drops and
    /// garbled bodies are worth retrying; any 4xx is permanent.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportFault::Http { status, .. } => *status >= 500,
            TransportFault::Timeout(_) | TransportFault::Connection(_) | TransportFault::Malformed(_) => true,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match self {
            TransportFault::Http { status, .. } => Some(*status),
            _ => None,
        }
    }
}

/// Sends one chat request and returns the assistant text.
///
/// Implementations must be shareable across worker threads.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportFault>;
}

// ---------------------------------------------------------------------------
// Real HTTP transport
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

/// Blocking HTTP transport for OpenAI-compatible `/chat/completions`
/// endpoints with bearer authentication.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    api_key: String,
}

impl HttpTransport {
    /// `base_url` is the prefix before `/chat/completions`, e.g.
    /// `https://api.example.com/v1`.
    pub fn new(base_url: &str, api_key: String, timeout: Duration) -> Result<Self, crate::error::Error> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| crate::error::Error::Transport(e.to_string()))?;
        Ok(HttpTransport {
            client,
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
        })
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportFault> {
        let response = self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(request)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportFault::Timeout(e.to_string())
                } else {
                    TransportFault::Connection(e.to_string())
                }
            })?;
        let status = response.status().as_u16();
        let body = response
            .text()
            .map_err(|e| TransportFault::Connection(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(TransportFault::Http { status, body });
        }
        let parsed: ChatCompletionResponse =
            serde_json::from_str(&body).map_err(|e| TransportFault::Malformed(e.to_string()))?;
        parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or_else(|| TransportFault::Malformed("response carried no choices".into()))
    }
}

// ---------------------------------------------------------------------------
// Scripted transport
// ---------------------------------------------------------------------------

enum Script {
    /// Outcomes played back in order; exhausting the queue fails the call.
    Queue(Mutex<std::collections::VecDeque<Result<String, TransportFault>>>),
    /// Replies derived from the request's text content.
    ByText {
        map: std::collections::HashMap<String, String>,
        fallback: Option<String>,
    },
    /// Fixed reply for every request.
    Constant(String),
}

/// Deterministic in-process transport with instrumentation: total calls and
/// the high-water mark of concurrent `send`s.
pub struct ScriptedTransport {
    script: Script,
    delay: Option<Duration>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl ScriptedTransport {
    /// Plays back `outcomes` in order; a call beyond the end gets a
    /// connection fault.
    pub fn new(outcomes: Vec<Result<String, TransportFault>>) -> Self {
        ScriptedTransport {
            script: Script::Queue(Mutex::new(outcomes.into())),
            delay: None,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        }
    }

    /// Maps the request's (last) text content to a reply. Requests whose
    /// text is not in the map get `fallback`, or a 404 fault if none is set.
    pub fn by_text(map: std::collections::HashMap<String, String>, fallback: Option<String>) -> Self {
        ScriptedTransport {
            script: Script::ByText { map, fallback },
            delay: None,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        }
    }

    /// Same fixed reply for every request, with an artificial per-call delay
    /// so concurrency tests can observe overlap.
    pub fn always_ok_with_delay(reply: &str, delay: Duration) -> Self {
        ScriptedTransport {
            script: Script::Constant(reply.to_string()),
            delay: Some(delay),
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        }
    }

    /// Total number of `send` calls observed.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest number of overlapping `send` calls observed.
    pub fn max_concurrent(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

impl Transport for ScriptedTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportFault> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        if let Some(delay) = self.delay {
            std::thread::sleep(delay);
        }
        let result = match &self.script {
            Script::Queue(queue) => queue.lock().unwrap().pop_front().unwrap_or_else(|| {
                Err(TransportFault::Connection("scripted transport exhausted".into()))
            }),
            Script::ByText { map, fallback } => {
                let text = request.last_text().unwrap_or_default();
                match map.get(text) {
                    Some(reply) => Ok(reply.clone()),
                    None => match fallback {
                        Some(reply) => Ok(reply.clone()),
                        None => Err(TransportFault::Http {
                            status: 404,
                            body: format!("no scripted reply for request text {text:?}"),
                        }),
                    },
                }
            }
            Script::Constant(reply) => Ok(reply.clone()),
        };
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}
