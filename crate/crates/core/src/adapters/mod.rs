//! Model-role adapters: speech recognition, speech synthesis, text encoding
//! and answering. Each role has a trait, an HTTP client speaking the `/v1`
//! protocol, and a deterministic in-process backend.

pub mod client;
pub mod config;
pub mod conformance;
pub mod local;
pub mod wire;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use client::WireClient;
pub use config::{AdapterEndpoint, EndpointsConfig, RetryPolicy};
pub use local::{BagOfCharsEncoder, SentinelTts, TextProxyAsr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Asr,
    Tts,
    Encode,
    Answer,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Asr, Role::Tts, Role::Encode, Role::Answer];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Asr => "asr",
            Role::Tts => "tts",
            Role::Encode => "encode",
            Role::Answer => "answer",
        }
    }

    pub fn path(self) -> &'static str {
        match self {
            Role::Asr => "/v1/asr",
            Role::Tts => "/v1/tts",
            Role::Encode => "/v1/encode",
            Role::Answer => "/v1/answer",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown role {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdapterError {
    #[error("{url}: timed out after {timeout_ms} ms")]
    Timeout { url: String, timeout_ms: u64 },
    #[error("protocol error: status {status}: {body}")]
    Protocol { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries {
        attempts: u32,
        last: Box<AdapterError>,
    },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("encoder returned ragged vectors: expected dimension {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("endpoint serves role {actual}, not {expected}")]
    WrongRole { expected: Role, actual: Role },
    #[error("adapter unavailable: {0}")]
    Unavailable(String),
    #[error("transcription of {reference:?} failed: {reason}")]
    TranscriptionFailed { reference: String, reason: String },
}

impl AdapterError {
    /// Snake-case variant name, as used by the protocol fixtures.
    pub fn kind(&self) -> &'static str {
        match self {
            AdapterError::Timeout { .. } => "timeout",
            AdapterError::Protocol { .. } => "protocol",
            AdapterError::ExhaustedRetries { .. } => "exhausted_retries",
            AdapterError::Transport(_) => "transport",
            AdapterError::MalformedResponse(_) => "malformed_response",
            AdapterError::DimensionMismatch { .. } => "dimension_mismatch",
            AdapterError::InvalidRequest(_) => "invalid_request",
            AdapterError::WrongRole { .. } => "wrong_role",
            AdapterError::Unavailable(_) => "unavailable",
            AdapterError::TranscriptionFailed { .. } => "transcription_failed",
        }
    }

    /// Worth another attempt: timeouts, transport failures, 429 and 5xx.
    pub fn is_transient(&self) -> bool {
        match self {
            AdapterError::Timeout { .. } | AdapterError::Transport(_) => true,
            AdapterError::Protocol { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Audio travels by reference by default; small clips may go inline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AudioPayload {
    Ref(String),
    Inline(Vec<u8>),
}

pub trait Transcriber: Send + Sync {
    fn transcribe(&self, audio: &AudioPayload) -> Result<String, AdapterError>;
}

pub trait SpeechSynth: Send + Sync {
    /// Returns a reference to the produced waveform.
    fn synthesize(&self, text: &str) -> Result<String, AdapterError>;
}

pub trait Answerer: Send + Sync {
    fn answer(&self, prompt: &str, audio_refs: &[String]) -> Result<String, AdapterError>;
}
