//! Offline backends: a rule-driven scripted mock and a closure wrapper.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ModelKind, ModelRequest};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedError {
    Unreachable,
    RateLimited,
    Server,
    Rejected,
}

/// One rule: every listed condition must hold for it to fire.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ModelKind>,
    /// Substrings that must all occur in the prompt.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prompt_contains: Vec<String>,
    /// Substring that must occur in the raw image bytes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_contains: Option<String>,
    /// Hex prefix of the image content hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// Successive responses; the last one repeats once exhausted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub responses: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ScriptedError>,
}

impl Rule {
    pub fn llm(prompt_contains: &[&str], response: &str) -> Self {
        Rule {
            kind: Some(ModelKind::Llm),
            prompt_contains: prompt_contains.iter().map(|s| s.to_string()).collect(),
            response: Some(response.to_string()),
            ..Rule::default()
        }
    }

    pub fn vlm(image_contains: &str, response: &str) -> Self {
        Rule {
            kind: Some(ModelKind::Vlm),
            image_contains: Some(image_contains.to_string()),
            response: Some(response.to_string()),
            ..Rule::default()
        }
    }

    pub fn llm_sequence(prompt_contains: &[&str], responses: &[&str]) -> Self {
        Rule {
            kind: Some(ModelKind::Llm),
            prompt_contains: prompt_contains.iter().map(|s| s.to_string()).collect(),
            responses: responses.iter().map(|s| s.to_string()).collect(),
            ..Rule::default()
        }
    }

    pub fn failing(kind: ModelKind, error: ScriptedError) -> Self {
        Rule {
            kind: Some(kind),
            error: Some(error),
            ..Rule::default()
        }
    }

    pub fn with_image_hash(mut self, prefix: &str) -> Self {
        self.image_hash = Some(prefix.to_string());
        self
    }

    fn matches(&self, request: &ModelRequest) -> bool {
        if self.kind.is_some_and(|k| k != request.kind) {
            return false;
        }
        if !self.prompt_contains.iter().all(|s| request.prompt.contains(s.as_str())) {
            return false;
        }
        if let Some(needle) = &self.image_contains {
            let Some(bytes) = &request.image_bytes else {
                return false;
            };
            let needle = needle.as_bytes();
            if needle.is_empty() || !bytes.windows(needle.len()).any(|w| w == needle) {
                return false;
            }
        }
        if let Some(prefix) = &self.image_hash {
            match &request.image_hash {
                Some(h) if h.to_hex().starts_with(&prefix.to_ascii_lowercase()) => {}
                _ => return false,
            }
        }
        true
    }
}

fn default_vlm_model() -> String {
    "mock-vlm".into()
}

fn default_llm_model() -> String {
    "mock-llm".into()
}

/// On-disk form of a [`ScriptedBackend`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default = "default_vlm_model")]
    pub vlm_model: String,
    #[serde(default = "default_llm_model")]
    pub llm_model: String,
    #[serde(default)]
    pub prompt_budget: Option<usize>,
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub default_response: Option<String>,
}

/// Answers with the first matching rule; unmatched requests get the
/// default response or a non-retryable rejection.
pub struct ScriptedBackend {
    script: Script,
    cursors: Vec<AtomicUsize>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<Rule>) -> Self {
        Self::from_script(Script {
            vlm_model: default_vlm_model(),
            llm_model: default_llm_model(),
            prompt_budget: None,
            rules,
            default_response: None,
        })
    }

    pub fn from_script(script: Script) -> Self {
        let cursors = script.rules.iter().map(|_| AtomicUsize::new(0)).collect();
        ScriptedBackend {
            script,
            cursors,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(Self::from_script(serde_json::from_str(text)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let script: Script = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Ok(Self::from_script(script))
    }

    pub fn with_prompt_budget(mut self, budget: Option<usize>) -> Self {
        self.script.prompt_budget = budget;
        self
    }

    pub fn with_default(mut self, response: &str) -> Self {
        self.script.default_response = Some(response.to_string());
        self
    }

    pub fn script(&self) -> &Script {
        &self.script
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn model_id(&self, kind: ModelKind) -> String {
        match kind {
            ModelKind::Vlm => self.script.vlm_model.clone(),
            ModelKind::Llm => self.script.llm_model.clone(),
        }
    }

    fn prompt_budget(&self, _kind: ModelKind) -> Option<usize> {
        self.script.prompt_budget
    }

    fn call(&self, request: &ModelRequest) -> std::result::Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let Some(i) = self.script.rules.iter().position(|r| r.matches(request)) else {
            return self.script.default_response.clone().ok_or(BackendError::Rejected {
                status: 404,
                message: "no scripted rule matched".into(),
            });
        };
        let rule = &self.script.rules[i];
        if let Some(err) = rule.error {
            return Err(match err {
                ScriptedError::Unreachable => BackendError::Unreachable("scripted".into()),
                ScriptedError::RateLimited => BackendError::RateLimited { retry_after: None },
                ScriptedError::Server => BackendError::Server {
                    status: 500,
                    message: "scripted".into(),
                },
                ScriptedError::Rejected => BackendError::Rejected {
                    status: 400,
                    message: "scripted".into(),
                },
            });
        }
        if !rule.responses.is_empty() {
            let n = self.cursors[i].fetch_add(1, Ordering::SeqCst);
            return Ok(rule.responses[n.min(rule.responses.len() - 1)].clone());
        }
        Ok(rule.response.clone().unwrap_or_default())
    }
}

type CallFn = dyn Fn(&ModelRequest) -> std::result::Result<String, BackendError> + Send + Sync;

/// Backend built from a closure.
pub struct FnBackend {
    f: Box<CallFn>,
    budget: Option<usize>,
    delay: Duration,
}

impl FnBackend {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&ModelRequest) -> std::result::Result<String, BackendError> + Send + Sync + 'static,
    {
        FnBackend {
            f: Box::new(f),
            budget: None,
            delay: Duration::ZERO,
        }
    }

    pub fn with_prompt_budget(mut self, budget: Option<usize>) -> Self {
        self.budget = budget;
        self
    }

    /// Sleeps before every call.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

impl Backend for FnBackend {
    fn name(&self) -> &str {
        "fn"
    }

    fn model_id(&self, kind: ModelKind) -> String {
        format!("fn-{kind}")
    }

    fn prompt_budget(&self, _kind: ModelKind) -> Option<usize> {
        self.budget
    }

    fn call(&self, request: &ModelRequest) -> std::result::Result<String, BackendError> {
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        (self.f)(request)
    }
}
