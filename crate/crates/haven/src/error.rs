//! Crate-wide error type.
//!
//! Library code returns structured [`Error`] values; only the CLI binary
//! flattens them into `anyhow` context. Variants are grouped by the failure
//! class callers are expected to branch on: input integrity problems are
//! fatal for a run, while per-item transport failures are not.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A line in a JSONL file could not be parsed into the expected record.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// The input violated a dataset-level uniqueness or consistency rule.
    #[error("dataset integrity violation: {0}")]
    Integrity(String),

    /// One or more variant groups break the transformation protocol.
    /// Every violation names its group id so the offending rows can be fixed.
    #[error("variant-group protocol violations:\n{}", format_violations(.0))]
    Protocol(Vec<ProtocolViolation>),

    /// A value fell outside the domain an operation is defined on
    /// (e.g. a negative duration handed to the bucketer).
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller passed structurally invalid arguments (bad edges, equal
    /// heatmap dimensions, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A prompt template was rendered without a value for a placeholder it
    /// contains.
    #[error("template error: missing value for placeholder {{{placeholder}}} in {template}")]
    Template {
        template: &'static str,
        placeholder: &'static str,
    },

    /// The judge reply did not reduce to a bare "1" or "0".
    #[error("verdict format error: judge replied {0:?}, expected \"1\" or \"0\"")]
    VerdictFormat(String),

    /// The answer-extraction reply matched none of the accepted shapes.
    #[error("extraction format error: extractor replied {0:?}")]
    ExtractionFormat(String),

    /// Configuration is unusable (bad manifest, invalid hyperparameters,
    /// adapter rank out of range, ...). Raised before any work starts.
    #[error("config error: {0}")]
    Config(String),

    /// The environment variable that should hold an API key is unset.
    #[error("api key environment variable {0:?} is not set")]
    MissingApiKey(String),

    /// Request body exceeds the transport byte cap; caught before any
    /// network traffic.
    #[error("request too large: {bytes} bytes exceeds cap of {cap}")]
    RequestTooLarge { bytes: usize, cap: usize },

    /// The endpoint rejected the request in a way that retrying cannot fix
    /// (HTTP 4xx). `attempts` is always 1.
    #[error("permanent endpoint failure (status {status}, {attempts} attempt): {message}")]
    Permanent {
        status: u16,
        attempts: u32,
        message: String,
    },

    /// Retryable failures (HTTP 5xx, timeouts) persisted through the whole
    /// retry budget.
    #[error("transient endpoint failure persisted after {attempts} attempts: {message}")]
    RetriesExhausted { attempts: u32, message: String },

    /// Low-level transport problem that is not an HTTP status.
    #[error("transport error: {0}")]
    Transport(String),

    /// The per-token weight mass `|y_o| + gamma * |y_h|` vanished, so the
    /// segment-weighted likelihood is undefined.
    #[error("degenerate segment weights: |y_o| + gamma*|y_h| = 0")]
    DegenerateWeights,

    /// Training produced a non-finite loss and was aborted.
    #[error("training diverged: non-finite loss at step {step}")]
    Diverged { step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// A single violation of the variant-group transformation protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolViolation {
    pub group_id: String,
    pub message: String,
}

impl ProtocolViolation {
    pub fn new(group_id: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            group_id: group_id.into(),
            message: message.into(),
        }
    }
}

fn format_violations(violations: &[ProtocolViolation]) -> String {
    violations
        .iter()
        .map(|v| format!("  group {}: {}", v.group_id, v.message))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    /// True for failures that should fail the whole run (exit code != 0),
    /// as opposed to per-item endpoint failures that are logged and skipped.
    pub fn is_fatal(&self) -> bool {
        !matches!(
            self,
            Error::Permanent { .. }
                | Error::RetriesExhausted { .. }
                | Error::Transport(_)
                | Error::RequestTooLarge { .. }
        )
    }
}
