use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest, EmbeddingVector, Embedder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// e.g. `http://localhost:8000/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub embedding_model: Option<String>,
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
}

fn default_timeout() -> u64 {
    60
}

fn default_backoff() -> u64 {
    500
}

/// Generic chat-completion client: messages array in, `choices[0]` out.
#[derive(Debug)]
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

enum Attempt {
    Retry(String),
    Fail(BackendError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn post_once(&self, path: &str, body: &Value) -> Result<Value, Attempt> {
        let mut req = self.client.post(self.url(path)).json(body);
        if let Some(var) = &self.config.auth_token_env {
            let token = std::env::var(var)
                .map_err(|_| Attempt::Fail(BackendError::Unavailable(format!("environment variable {var} is not set"))))?;
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Attempt::Fail(BackendError::Unavailable(format!("HTTP {status}: {text}"))));
        }
        resp.json::<Value>()
            .map_err(|e| Attempt::Fail(BackendError::Unavailable(format!("bad response body: {e}"))))
    }

    /// One retry after `retry_backoff_ms`, then `Unavailable`.
    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let mut backoff = Duration::from_millis(self.config.retry_backoff_ms);
        let mut last = String::new();
        for attempt in 0..2 {
            if attempt > 0 {
                thread::sleep(backoff);
                backoff *= 2;
            }
            match self.post_once(path, body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("{path} attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(BackendError::Unavailable(last))
    }
}

impl ChatBackend for HttpBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        request.validate()?;
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if !request.stop_sequences.is_empty() {
            body["stop"] = json!(request.stop_sequences);
        }
        let value = self.post("chat/completions", &body)?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Unavailable("response has no choices[0].message.content".into()))
    }
}

impl Embedder for HttpBackend {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let model = self
            .config
            .embedding_model
            .as_deref()
            .ok_or_else(|| BackendError::Unavailable("no embedding_model configured".into()))?;
        let value = self.post("embeddings", &json!({"model": model, "input": text}))?;
        let values: Vec<f64> = value
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::Unavailable("response has no data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().unwrap_or(0.0))
            .collect();
        Ok(EmbeddingVector::normalized(values))
    }
}
