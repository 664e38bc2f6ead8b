//! Chat backend contract, retry/rate limiting, and mock backends.

pub mod audit;
pub mod http;
pub mod image;
pub mod mock;
mod retry;

pub use retry::{complete_with_retry, RateLimited, RateLimiter, RetryPolicy};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sample::Truth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One message. `image` is a path to an image file on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

impl ChatTurn {
    pub fn system(text: impl Into<String>) -> Self {
        ChatTurn {
            role: Role::System,
            text: text.into(),
            image: None,
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        ChatTurn {
            role: Role::User,
            text: text.into(),
            image: None,
        }
    }

    pub fn user_with_image(text: impl Into<String>, image: impl Into<String>) -> Self {
        ChatTurn {
            role: Role::User,
            text: text.into(),
            image: Some(image.into()),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        ChatTurn {
            role: Role::Assistant,
            text: text.into(),
            image: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty() && self.image.is_none()
    }
}

/// Sampling knobs forwarded to the backend. `top_k = None` means the
/// parameter is omitted from the request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 1.0,
            top_p: 1.0,
            top_k: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub history: &'a [ChatTurn],
    pub params: &'a GenerationParams,
    /// Ground truth of the sample this conversation is about. Real backends
    /// ignore it; mocks answer from it.
    pub binding: Option<&'a Truth>,
}

impl<'a> CompletionRequest<'a> {
    pub fn new(history: &'a [ChatTurn], params: &'a GenerationParams) -> Self {
        CompletionRequest {
            history,
            params,
            binding: None,
        }
    }

    pub fn bound(mut self, truth: Option<&'a Truth>) -> Self {
        self.binding = truth;
        self
    }

    pub fn last_user_text(&self) -> Option<&'a str> {
        self.history
            .iter()
            .rev()
            .find(|t| t.role == Role::User)
            .map(|t| t.text.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    /// Network or server-side failure; safe to retry.
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }

    pub fn category(&self) -> &'static str {
        match self {
            BackendError::Transport(_) => "transport",
            BackendError::Auth(_) => "auth",
            BackendError::Malformed(_) => "malformed",
            BackendError::Rejected { .. } => "rejected",
            BackendError::InvalidRequest(_) => "invalid_request",
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Returns the assistant's reply text verbatim. Must not reorder or
    /// modify `req.history`.
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<String, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<String, BackendError> {
        (**self).complete(req)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<String, BackendError> {
        (**self).complete(req)
    }
}

pub(crate) fn validate_history(history: &[ChatTurn]) -> Result<(), BackendError> {
    if history.is_empty() {
        return Err(BackendError::InvalidRequest("history is empty".into()));
    }
    if let Some(i) = history.iter().position(ChatTurn::is_empty) {
        return Err(BackendError::InvalidRequest(format!("turn {i} has neither text nor image")));
    }
    Ok(())
}
