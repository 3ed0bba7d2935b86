//! Chat-completion and embedding providers.
//!
//! [`ChatBackend`] is the only way the engine talks to a model. Two
//! implementations ship: [`ScriptedBackend`], which replays a JSONL fixture in
//! strict order for offline runs, and [`HttpBackend`], which speaks the common
//! `chat/completions` JSON shape.

mod embed;
mod http;
mod scripted;

pub use embed::{cosine, fnv1a64, tokenize, EmbeddingVector, Embedder, HashEmbedder, DEFAULT_DIMENSION};
pub use http::{HttpBackend, HttpConfig};
pub use scripted::{Exchange, ScriptEntry, ScriptedBackend};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::message::{Message, Role};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("script exhausted after {consumed} responses; unexpected prompt ends with:\n{prompt_tail}")]
    ScriptExhausted { consumed: usize, prompt_tail: String },
    #[error("script entry {index} expects substring {expected:?}, absent from prompt:\n{prompt_tail}")]
    ScriptMismatch {
        index: usize,
        expected: String,
        prompt_tail: String,
    },
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

impl BackendError {
    /// Script failures mean the test double and the engine disagree; they
    /// abort the whole run instead of entering recovery paths.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            BackendError::ScriptExhausted { .. }
                | BackendError::ScriptMismatch { .. }
                | BackendError::InvalidRequest(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl ChatRequest {
    pub fn new(messages: Vec<Message>, params: &ChatParams) -> Result<Self, BackendError> {
        let request = Self {
            messages,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            stop_sequences: params.stop_sequences.clone(),
        };
        request.validate()?;
        Ok(request)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.messages.first() {
            Some(m) if m.role == Role::System => {}
            _ => return Err(BackendError::InvalidRequest("first message must be a system message".into())),
        }
        if self
            .messages
            .windows(2)
            .any(|w| w[0].role == Role::Assistant && w[1].role == Role::Assistant)
        {
            return Err(BackendError::InvalidRequest("two consecutive assistant messages".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Canonical text form of the prompt. Scripted expectations and prompt
    /// hashes are computed over this rendering.
    pub fn render(&self) -> String {
        render_messages(&self.messages)
    }
}

pub fn render_messages(messages: &[Message]) -> String {
    let mut out = String::new();
    for (i, m) in messages.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        out.push('[');
        out.push_str(m.role.as_str());
        out.push_str("]\n");
        out.push_str(&m.content);
    }
    out
}

/// Hex SHA-256 of `text`.
pub fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Sampling parameters attached to every request an agent makes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop_sequences: Vec<String>,
}

impl Default for ChatParams {
    fn default() -> Self {
        Self::executor()
    }
}

impl ChatParams {
    /// Planner and verifier defaults.
    pub fn deterministic() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 1024,
            stop_sequences: Vec::new(),
        }
    }

    pub fn executor() -> Self {
        Self {
            temperature: 0.2,
            max_tokens: 1024,
            stop_sequences: Vec::new(),
        }
    }
}

pub trait ChatBackend: Send + Sync {
    /// Returns the raw completion text for `request`.
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).chat(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).chat(request)
    }
}

/// Backend driven by a closure; handy for tests that answer by inspecting the
/// prompt rather than by call order.
pub struct FnBackend<F>(pub F);

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync,
{
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (self.0)(request)
    }
}
