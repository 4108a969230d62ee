//! Chat-completion HTTP backend.
//!
//! Each model kind has its own endpoint section in a TOML file:
//!
//! ```toml
//! [vlm]
//! endpoint = "http://localhost:8000/v1/chat/completions"
//! model = "llava-v1.6-34b"
//!
//! [llm]
//! endpoint = "https://api.example.com/v1/chat/completions"
//! model = "gpt-4"
//! auth_env = "LLM_API_KEY"
//! max_prompt_tokens = 8000
//! ```
//!
//! Credentials are read only from the environment variable named by
//! `auth_env`.

use std::path::Path;
use std::time::Duration;

use base64::Engine as _;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{Backend, BackendError, ModelKind, ModelRequest};
use crate::error::{Error, Result};

fn default_auth_header() -> String {
    "Authorization".into()
}

fn default_auth_scheme() -> String {
    "Bearer".into()
}

fn default_timeout() -> u64 {
    300
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    /// Prefix placed before the credential; empty for a bare key.
    #[serde(default = "default_auth_scheme")]
    pub auth_scheme: String,
    #[serde(default)]
    pub max_prompt_tokens: Option<usize>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveConfig {
    pub vlm: Option<EndpointConfig>,
    pub llm: Option<EndpointConfig>,
}

impl LiveConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("live backend config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

pub struct HttpBackend {
    config: LiveConfig,
    agent: ureq::Agent,
}

/// Guesses the image MIME type from its magic bytes.
pub fn sniff_mime(bytes: &[u8]) -> &'static str {
    match bytes {
        [0x89, b'P', b'N', b'G', ..] => "image/png",
        [0xFF, 0xD8, 0xFF, ..] => "image/jpeg",
        [b'B', b'M', ..] => "image/bmp",
        [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'E', b'B', b'P', ..] => "image/webp",
        [b'G', b'I', b'F', b'8', ..] => "image/gif",
        _ => "application/octet-stream",
    }
}

/// Chat-completion request body for one model call.
pub fn request_body(request: &ModelRequest) -> Value {
    let content = match &request.image_bytes {
        Some(bytes) => {
            let b64 = base64::engine::general_purpose::STANDARD.encode(bytes.as_slice());
            json!([
                {"type": "text", "text": request.prompt},
                {"type": "image_url", "image_url": {"url": format!("data:{};base64,{b64}", sniff_mime(bytes))}},
            ])
        }
        None => Value::String(request.prompt.clone()),
    };
    let mut body = json!({
        "model": request.model_id,
        "messages": [{"role": "user", "content": content}],
        "temperature": request.sampling.temperature,
        "max_tokens": request.sampling.max_tokens,
    });
    if let Some(seed) = request.sampling.seed {
        body["seed"] = json!(seed);
    }
    body
}

/// Pulls the assistant text out of a chat-completion response.
pub fn response_text(body: &Value) -> Option<String> {
    let content = body.pointer("/choices/0/message/content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        ),
        Value::Null => Some(String::new()),
        _ => None,
    }
}

impl HttpBackend {
    pub fn new(config: LiveConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend { config, agent }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::new(LiveConfig::load(path)?))
    }

    fn endpoint(&self, kind: ModelKind) -> Option<&EndpointConfig> {
        match kind {
            ModelKind::Vlm => self.config.vlm.as_ref(),
            ModelKind::Llm => self.config.llm.as_ref(),
        }
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        "live"
    }

    fn model_id(&self, kind: ModelKind) -> String {
        self.endpoint(kind).map(|e| e.model.clone()).unwrap_or_default()
    }

    fn prompt_budget(&self, kind: ModelKind) -> Option<usize> {
        self.endpoint(kind).and_then(|e| e.max_prompt_tokens)
    }

    fn call(&self, request: &ModelRequest) -> std::result::Result<String, BackendError> {
        let ep = self
            .endpoint(request.kind)
            .ok_or(BackendError::Unsupported(request.kind))?;
        let mut req = self
            .agent
            .post(&ep.endpoint)
            .config()
            .timeout_global(Some(Duration::from_secs(ep.timeout_secs)))
            .build()
            .header("Content-Type", "application/json");
        if let Some(var) = &ep.auth_env {
            let key = std::env::var(var).map_err(|_| BackendError::Rejected {
                status: 0,
                message: format!("environment variable {var} is not set"),
            })?;
            let value = if ep.auth_scheme.is_empty() {
                key
            } else {
                format!("{} {key}", ep.auth_scheme)
            };
            req = req.header(ep.auth_header.as_str(), value.as_str());
        }
        let body = serde_json::to_vec(&request_body(request)).expect("request body serializes");
        let mut resp = req
            .send(&body[..])
            .map_err(|e| BackendError::Unreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Unreachable(e.to_string()))?;
        match status {
            200..=299 => {
                let value: Value = serde_json::from_str(&text).map_err(|e| BackendError::Server {
                    status,
                    message: format!("malformed response body: {e}"),
                })?;
                response_text(&value).ok_or(BackendError::Server {
                    status,
                    message: "response has no choices[0].message.content".into(),
                })
            }
            429 => Err(BackendError::RateLimited { retry_after }),
            500..=599 => Err(BackendError::Server { status, message: text }),
            _ => Err(BackendError::Rejected { status, message: text }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Sampling;
    use crate::Digest;
    use std::sync::Arc;

    #[test]
    fn body_shapes() {
        let llm = ModelRequest::llm("gpt", "hi", Sampling::default());
        let b = request_body(&llm);
        assert_eq!(b["messages"][0]["content"], "hi");
        assert_eq!(b["temperature"], 0.0);
        assert!(b.get("seed").is_none());

        let png = Arc::new(vec![0x89, b'P', b'N', b'G', 1, 2]);
        let vlm = ModelRequest::vlm("llava", "describe", Digest::of(&png), png, Sampling::default());
        let b = request_body(&vlm);
        let url = b["messages"][0]["content"][1]["image_url"]["url"].as_str().unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
    }

    #[test]
    fn content_variants() {
        let s = json!({"choices":[{"message":{"content":"Answer: x"}}]});
        assert_eq!(response_text(&s).unwrap(), "Answer: x");
        let parts = json!({"choices":[{"message":{"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]}}]});
        assert_eq!(response_text(&parts).unwrap(), "ab");
        assert!(response_text(&json!({})).is_none());
    }

    #[test]
    fn config_parses() {
        let c = LiveConfig::from_toml_str(
            "[llm]\nendpoint = \"http://x\"\nmodel = \"m\"\nmax_prompt_tokens = 10\n",
        )
        .unwrap();
        assert!(c.vlm.is_none());
        let llm = c.llm.unwrap();
        assert_eq!(llm.auth_header, "Authorization");
        assert_eq!(llm.max_prompt_tokens, Some(10));
    }
}
