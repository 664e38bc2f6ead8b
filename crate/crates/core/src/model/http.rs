//! HTTP chat-completion backend.
//!
//! Wire shape (OpenAI-compatible chat completions):
//!
//! ```json
//! {"model": "...", "temperature": 1.0, "top_p": 1.0,
//!  "messages": [{"role": "user", "content": [
//!     {"type": "text", "text": "..."},
//!     {"type": "image_url", "image_url": {"url": "data:image/png;base64,..."}}]}]}
//! ```
//!
//! `top_k` is only sent when set. The reply is `choices[0].message.content`,
//! either a string or a list of `{"type": "text", "text": ...}` parts.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::image::{data_url, WIRE_IMAGE_SIZE};
use super::{validate_history, BackendError, ChatBackend, ChatTurn, CompletionRequest, GenerationParams, RetryPolicy, Role};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireFormat {
    #[default]
    OpenaiChat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend_id: String,
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    /// Environment variable that holds the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_one")]
    pub temperature: f64,
    #[serde(default = "default_one")]
    pub top_p: f64,
    #[serde(default)]
    pub top_k: Option<u32>,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    #[serde(default = "default_image_size")]
    pub image_size: u32,
    #[serde(default)]
    pub wire: WireFormat,
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_one() -> f64 {
    1.0
}
fn default_image_size() -> u32 {
    WIRE_IMAGE_SIZE
}

impl BackendConfig {
    pub fn new(backend_id: impl Into<String>, endpoint: impl Into<String>) -> Self {
        BackendConfig {
            backend_id: backend_id.into(),
            endpoint: endpoint.into(),
            model: String::new(),
            auth_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            temperature: 1.0,
            top_p: 1.0,
            top_k: None,
            requests_per_minute: None,
            image_size: WIRE_IMAGE_SIZE,
            wire: WireFormat::OpenaiChat,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(BackendError::InvalidRequest("timeout must be positive".into()));
        }
        if self.endpoint.is_empty() {
            return Err(BackendError::InvalidRequest("endpoint is empty".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> GenerationParams {
        GenerationParams {
            temperature: self.temperature,
            top_p: self.top_p,
            top_k: self.top_k,
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            ..RetryPolicy::default()
        }
    }
}

pub struct HttpBackend {
    cfg: BackendConfig,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self, BackendError> {
        cfg.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpBackend { cfg, agent })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    pub fn encode(&self, history: &[ChatTurn], params: &GenerationParams) -> Result<Value, BackendError> {
        let messages = history
            .iter()
            .map(|t| {
                let role = match t.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                let mut parts = Vec::new();
                if !t.text.is_empty() {
                    parts.push(json!({"type": "text", "text": t.text}));
                }
                if let Some(img) = &t.image {
                    let url = data_url(Path::new(img), self.cfg.image_size)?;
                    parts.push(json!({"type": "image_url", "image_url": {"url": url}}));
                }
                Ok(json!({"role": role, "content": parts}))
            })
            .collect::<Result<Vec<_>, BackendError>>()?;
        let mut body = json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": params.temperature,
            "top_p": params.top_p,
        });
        if let Some(k) = params.top_k {
            body["top_k"] = json!(k);
        }
        Ok(body)
    }
}

pub fn decode_reply(body: &str) -> Result<String, BackendError> {
    let v: Value = serde_json::from_str(body).map_err(|e| BackendError::Malformed(format!("not JSON: {e}")))?;
    let content = v
        .pointer("/choices/0/message/content")
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => {
            let texts: Vec<&str> = parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect();
            if texts.is_empty() {
                Err(BackendError::Malformed("content has no text parts".into()))
            } else {
                Ok(texts.join(""))
            }
        }
        _ => Err(BackendError::Malformed("content is neither string nor list".into())),
    }
}

impl ChatBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.cfg.backend_id
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<String, BackendError> {
        validate_history(req.history)?;
        let body = self.encode(req.history, req.params)?;
        let mut request = self.agent.post(&self.cfg.endpoint);
        if let Some(var) = &self.cfg.auth_env {
            let token = std::env::var(var).map_err(|_| BackendError::Auth(format!("environment variable {var} is not set")))?;
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = request
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            200..=299 => decode_reply(&text),
            401 | 403 => Err(BackendError::Auth(format!("status {status}"))),
            408 | 429 | 500..=599 => Err(BackendError::Transport(format!("status {status}"))),
            _ => Err(BackendError::Rejected { status, body: text }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_string_and_parts() {
        assert_eq!(decode_reply(r#"{"choices":[{"message":{"content":"hi"}}]}"#).unwrap(), "hi");
        assert_eq!(
            decode_reply(r#"{"choices":[{"message":{"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]}}]}"#).unwrap(),
            "ab"
        );
        assert!(matches!(decode_reply("oops"), Err(BackendError::Malformed(_))));
        assert!(matches!(decode_reply(r#"{"choices":[]}"#), Err(BackendError::Malformed(_))));
    }

    #[test]
    fn encode_omits_unset_top_k() {
        let b = HttpBackend::new(BackendConfig::new("t", "http://127.0.0.1:9")).unwrap();
        let body = b.encode(&[ChatTurn::user("hi")], &GenerationParams::default()).unwrap();
        assert!(body.get("top_k").is_none());
        assert_eq!(body["temperature"], 1.0);
        assert_eq!(body["messages"][0]["content"][0]["text"], "hi");
        let body = b
            .encode(&[ChatTurn::user("hi")], &GenerationParams { top_k: Some(5), ..Default::default() })
            .unwrap();
        assert_eq!(body["top_k"], 5);
    }

    #[test]
    fn missing_image_is_invalid_request() {
        let b = HttpBackend::new(BackendConfig::new("t", "http://127.0.0.1:9")).unwrap();
        let err = b
            .encode(&[ChatTurn::user_with_image("hi", "/nonexistent/x.png")], &GenerationParams::default())
            .unwrap_err();
        assert!(matches!(err, BackendError::InvalidRequest(_)));
    }

    #[test]
    fn config_validation() {
        let mut c = BackendConfig::new("t", "http://x");
        c.timeout_secs = 0.0;
        assert!(HttpBackend::new(c).is_err());
        let c: BackendConfig = serde_json::from_str(r#"{"backend_id":"gpt","endpoint":"http://x"}"#).unwrap();
        assert_eq!(c.params(), GenerationParams::default());
        assert_eq!(c.image_size, 336);
    }
}
