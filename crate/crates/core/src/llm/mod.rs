//! Chat-completion backends.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod http;
mod ratelimit;
mod scripted;

pub use http::{Dialect, HttpBackend, HttpConfig, API_KEY_ENV};
pub use ratelimit::TokenBucket;
pub use scripted::{OnExhaust, ScriptItem, ScriptedBackend};

pub const DEFAULT_TIMEOUT_SECS: f64 = 120.0;

pub const ORCA_SYSTEM_PROMPT: &str = "You are Orca, an AI language model created by Microsoft. You are a cautious assistant. You carefully follow instructions. You are helpful and harmless and you follow ethical guidelines and promote positive behavior.";

pub const VICUNA_SYSTEM_PROMPT: &str = "A chat between a curious user and an artificial intelligence assistant. The assistant gives helpful, detailed, and polite answers to the user's questions.";

/// System prompt a model ships with, if it is one of the models that needs one.
pub fn default_system_prompt(model: &str) -> Option<&'static str> {
    let m = model.to_ascii_lowercase();
    if m.contains("orca") {
        Some(ORCA_SYSTEM_PROMPT)
    } else if m.contains("vicuna") {
        Some(VICUNA_SYSTEM_PROMPT)
    } else {
        None
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("request has an empty user message")]
    EmptyMessage,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("malformed server reply: {0}")]
    Malformed(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server returned status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("scripted backend exhausted after {0} calls")]
    Exhausted(usize),
}

impl LlmError {
    /// Whether another attempt may succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            Self::Timeout(_) | Self::Transport(_) => true,
            Self::Status { code, .. } => *code == 429 || *code >= 500,
            _ => false,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            Self::EmptyMessage | Self::InvalidRequest(_) => "invalid_request",
            Self::Timeout(_) => "timeout",
            Self::Auth(_) => "auth",
            Self::Malformed(_) => "malformed_reply",
            Self::Transport(_) => "transport",
            Self::Status { .. } => "status",
            Self::Exhausted(_) => "exhausted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub system_prompt: Option<String>,
    pub user_message: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    /// Seconds.
    pub timeout: f64,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, user_message: impl Into<String>, temperature: f64) -> Self {
        Self {
            model: model.into(),
            system_prompt: None,
            user_message: user_message.into(),
            temperature,
            max_tokens: None,
            timeout: DEFAULT_TIMEOUT_SECS,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.user_message.is_empty() {
            return Err(LlmError::EmptyMessage);
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            return Err(LlmError::InvalidRequest(format!("timeout {}", self.timeout)));
        }
        Ok(())
    }

    pub fn timeout_duration(&self) -> Duration {
        Duration::from_secs_f64(self.timeout)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Option<Usage>,
    /// Seconds.
    pub latency: f64,
    pub backend: String,
}

/// Anything that answers chat requests. Calls may be issued concurrently.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    /// Default sampling temperature for this backend.
    fn default_temperature(&self) -> f64;

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}
