//! Errors and HTTP transport shared by the model-backed adapters.
//!
//! The HTTP adapters speak the widely deployed chat-completions and
//! embeddings JSON shapes:
//!
//! * chat: `POST {endpoint}` with `{"model", "messages":[{"role":"user","content"}], "temperature":0}`,
//!   answer read from `choices[0].message.content`;
//! * embeddings: `POST {endpoint}` with `{"model", "input":[...]}`,
//!   vectors read from `data[i].embedding`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub const LLM_TOKEN_ENV: &str = "MALRAG_LLM_TOKEN";
pub const EMBED_TOKEN_ENV: &str = "MALRAG_EMBED_TOKEN";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("backend returned empty output")]
    EmptyOutput,
    #[error("{0}")]
    Other(String),
}

/// Settings for an HTTP model endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpSettings {
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

impl HttpSettings {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpSettings {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout_secs: default_timeout_secs(),
        }
    }
}

/// Blocking JSON client bound to one endpoint, with an optional bearer token.
#[derive(Debug, Clone)]
pub struct HttpClient {
    settings: HttpSettings,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpClient {
    /// Reads the bearer token from `token_env` if it is set.
    pub fn from_env(settings: HttpSettings, token_env: &str) -> Self {
        let token = std::env::var(token_env).ok().filter(|t| !t.is_empty());
        Self::new(settings, token)
    }

    pub fn new(settings: HttpSettings, token: Option<String>) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(settings.timeout_secs))
            .build();
        HttpClient {
            settings,
            token,
            agent,
        }
    }

    pub fn settings(&self) -> &HttpSettings {
        &self.settings
    }

    pub fn post_json(&self, body: &Value) -> Result<Value, BackendError> {
        let mut req = self
            .agent
            .post(&self.settings.endpoint)
            .set("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        match req.send_json(body) {
            Ok(resp) => resp
                .into_json::<Value>()
                .map_err(|e| BackendError::Protocol(e.to_string())),
            Err(ureq::Error::Status(status, resp)) => Err(BackendError::Status {
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(e) => Err(BackendError::Transport(e.to_string())),
        }
    }

    /// Sends one user message and returns the trimmed reply.
    pub fn chat(&self, prompt: &str) -> Result<String, BackendError> {
        let body = json!({
            "model": self.settings.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let resp = self.post_json(&body)?;
        let content = resp
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".into()))?;
        let content = content.trim();
        if content.is_empty() {
            return Err(BackendError::EmptyOutput);
        }
        Ok(content.to_string())
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        let body = json!({ "model": self.settings.model, "input": texts });
        let resp = self.post_json(&body)?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::Protocol("missing `data` array".into()))?;
        if data.len() != texts.len() {
            return Err(BackendError::Protocol(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        data.iter()
            .map(|item| {
                item.get("embedding")
                    .and_then(Value::as_array)
                    .ok_or_else(|| BackendError::Protocol("missing `embedding`".into()))?
                    .iter()
                    .map(|x| {
                        x.as_f64()
                            .map(|f| f as f32)
                            .ok_or_else(|| BackendError::Protocol("non-numeric embedding value".into()))
                    })
                    .collect()
            })
            .collect()
    }
}

/// Substitutes every `{input}` placeholder in `template`.
pub fn fill_input(template: &str, input: &str) -> String {
    template.replace("{input}", input)
}
