use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, GatewayError, StructuredRequest};

/// OpenAI-compatible chat-completion and embedding endpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteConfig {
    /// Base URL, e.g. `https://api.openai.com/v1`.
    pub endpoint: String,
    pub chat_model: String,
    pub embedding_model: String,
    /// Name of the environment variable holding the API key. The key itself
    /// is read at call time and never stored.
    pub api_key_var: String,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            chat_model: "gpt-4".into(),
            embedding_model: "text-embedding-3-large".into(),
            api_key_var: "LLM_API_KEY".into(),
        }
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend").field("config", &self.config).finish_non_exhaustive()
    }
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig, timeout: Duration) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::BackendError { status: None, message: e.to_string() })?;
        Ok(Self { config, client })
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let url = format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path);
        let mut req = self.client.post(url).json(body);
        if let Ok(key) = std::env::var(&self.config.api_key_var) {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout
            } else {
                GatewayError::BackendError { status: e.status().map(|s| s.as_u16()), message: e.to_string() }
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let message = resp.text().unwrap_or_default();
            return Err(GatewayError::BackendError { status: Some(status.as_u16()), message });
        }
        resp.json::<Value>().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout
            } else {
                GatewayError::BackendError { status: Some(status.as_u16()), message: e.to_string() }
            }
        })
    }
}

impl Backend for RemoteBackend {
    fn complete(&self, request: &StructuredRequest, feedback: &[String]) -> Result<String, GatewayError> {
        let body = json!({
            "model": self.config.chat_model,
            "messages": [
                { "role": "system", "content": request.system_prompt },
                { "role": "user", "content": request.user_message(feedback) },
            ],
            "response_format": { "type": "json_object" },
        });
        let resp = self.post("chat/completions", &body)?;
        resp["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| GatewayError::BackendError { status: None, message: "response has no message content".into() })
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        let resp = self.post("embeddings", &json!({ "model": self.config.embedding_model, "input": text }))?;
        resp["data"][0]["embedding"]
            .as_array()
            .map(|xs| xs.iter().filter_map(Value::as_f64).collect())
            .ok_or_else(|| GatewayError::BackendError { status: None, message: "response has no embedding".into() })
    }
}
