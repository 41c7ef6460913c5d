//! Language-model gateway.
//!
//! Every call that needs a model (message tagging, topic summaries,
//! embeddings, and the suggestion chain) goes through [`Gateway`]. The gateway
//! owns output validation: structured completions are parsed and checked
//! against the request's JSON schema, and an invalid answer is retried with
//! the validation errors appended to the prompt.
//!
//! Two backends ship with the crate: [`RemoteBackend`] talks to an
//! OpenAI-compatible HTTP API, and [`StubBackend`] answers deterministically
//! from the request contents so sessions can be replayed offline.

mod prompts;
mod remote;
mod scripted;
mod stub;

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use crate::model::MessageCategory;

pub use prompts::{PromptTemplate, Task, DEFAULT_PROBLEM};
pub use remote::{RemoteBackend, RemoteConfig};
pub use scripted::ScriptedBackend;
pub use stub::{tokenize, StubBackend, STUB_EMBEDDING_DIM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("request timed out")]
    Timeout,
    #[error("output failed schema validation after {attempts} attempts: {last_error}")]
    SchemaInvalidAfterRetries { attempts: u32, last_error: String },
    #[error("backend error (status {status:?}): {message}")]
    BackendError { status: Option<u16>, message: String },
    #[error("gateway unavailable: {0}")]
    Unavailable(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// A prompt plus the schema its answer must satisfy.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredRequest {
    pub task: Task,
    pub system_prompt: String,
    /// Task description, format notes, and few-shot examples.
    pub instructions: String,
    pub user_payload: Value,
    pub output_schema: Value,
}

impl StructuredRequest {
    /// Text of the user turn, including validation feedback from earlier
    /// attempts.
    pub fn user_message(&self, feedback: &[String]) -> String {
        let mut msg = format!(
            "{}\n\nInput (JSON):\n{}",
            self.instructions,
            serde_json::to_string(&self.user_payload).unwrap_or_default()
        );
        if !feedback.is_empty() {
            msg.push_str("\n\nYour previous answer was rejected. Fix these problems and answer again with valid JSON only:");
            for item in feedback {
                msg.push_str("\n- ");
                msg.push_str(item);
            }
        }
        msg
    }
}

/// Transport to a model. Backends return raw text; the gateway parses and
/// validates it.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &StructuredRequest, feedback: &[String]) -> Result<String, GatewayError>;
    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendConfig {
    Remote(RemoteConfig),
    Stub { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayConfig {
    pub backend: BackendConfig,
    pub timeout_s: f64,
    pub max_retries: u32,
    /// In-flight request cap per session.
    pub max_concurrency: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self { backend: BackendConfig::Stub { seed: 0 }, timeout_s: 30.0, max_retries: 2, max_concurrency: 2 }
    }
}

impl GatewayConfig {
    pub fn stub(seed: u64) -> Self {
        Self { backend: BackendConfig::Stub { seed }, ..Self::default() }
    }

    /// Reads `LLM_BACKEND`, `LLM_SEED`, `LLM_TIMEOUT_S`, `LLM_MAX_RETRIES`,
    /// and for the remote backend `LLM_ENDPOINT`, `LLM_CHAT_MODEL`,
    /// `LLM_EMBED_MODEL`, `LLM_API_KEY_VAR`.
    pub fn from_env() -> Result<Self, GatewayError> {
        Self::from_lookup(|key| std::env::var(key).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, GatewayError> {
        let invalid = |key: &str, value: &str| GatewayError::InvalidInput(format!("{key}={value:?}"));
        let mut config = Self::default();
        if let Some(v) = lookup("LLM_TIMEOUT_S") {
            config.timeout_s = v.parse().ok().filter(|t: &f64| *t > 0.0).ok_or_else(|| invalid("LLM_TIMEOUT_S", &v))?;
        }
        if let Some(v) = lookup("LLM_MAX_RETRIES") {
            config.max_retries = v.parse().map_err(|_| invalid("LLM_MAX_RETRIES", &v))?;
        }
        let seed = match lookup("LLM_SEED") {
            Some(v) => v.parse().map_err(|_| invalid("LLM_SEED", &v))?,
            None => 0,
        };
        config.backend = match lookup("LLM_BACKEND").as_deref().unwrap_or("stub") {
            "stub" => BackendConfig::Stub { seed },
            "remote" => {
                let mut remote = RemoteConfig::default();
                if let Some(v) = lookup("LLM_ENDPOINT") {
                    remote.endpoint = v;
                }
                if let Some(v) = lookup("LLM_CHAT_MODEL") {
                    remote.chat_model = v;
                }
                if let Some(v) = lookup("LLM_EMBED_MODEL") {
                    remote.embedding_model = v;
                }
                if let Some(v) = lookup("LLM_API_KEY_VAR") {
                    remote.api_key_var = v;
                }
                BackendConfig::Remote(remote)
            }
            other => return Err(invalid("LLM_BACKEND", other)),
        };
        Ok(config)
    }
}

#[derive(Debug)]
struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self { available: Mutex::new(n.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut available = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *available == 0 {
            available = self.freed.wait(available).unwrap_or_else(|e| e.into_inner());
        }
        *available -= 1;
        PermitGuard { permits: self }
    }
}

struct PermitGuard<'a> {
    permits: &'a Permits,
}

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.permits.available.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.permits.freed.notify_one();
    }
}

/// Validating client over a [`Backend`]. Cheap to clone; clones share the
/// concurrency cap, [`Gateway::session_handle`] makes one with its own cap.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    max_retries: u32,
    max_concurrency: usize,
    permits: Arc<Permits>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("max_retries", &self.max_retries).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, max_retries: u32, max_concurrency: usize) -> Self {
        Self { backend, max_retries, max_concurrency, permits: Arc::new(Permits::new(max_concurrency)) }
    }

    pub fn from_config(config: &GatewayConfig) -> Result<Self, GatewayError> {
        let backend: Arc<dyn Backend> = match &config.backend {
            BackendConfig::Stub { seed } => Arc::new(StubBackend::new(*seed)),
            BackendConfig::Remote(remote) => {
                Arc::new(RemoteBackend::new(remote.clone(), Duration::from_secs_f64(config.timeout_s))?)
            }
        };
        Ok(Self::new(backend, config.max_retries, config.max_concurrency))
    }

    pub fn stub(seed: u64) -> Self {
        Self::new(Arc::new(StubBackend::new(seed)), 2, 2)
    }

    pub fn session_handle(&self) -> Self {
        Self::new(self.backend.clone(), self.max_retries, self.max_concurrency)
    }

    /// Runs `request`, retrying up to `max_retries` times when the answer
    /// is not valid JSON or does not satisfy the output schema.
    pub fn complete_structured(&self, request: &StructuredRequest) -> Result<Value, GatewayError> {
        let validator = jsonschema::validator_for(&request.output_schema)
            .map_err(|e| GatewayError::InvalidInput(format!("bad output schema: {e}")))?;
        let _permit = self.permits.acquire();
        let mut feedback: Vec<String> = Vec::new();
        let attempts = self.max_retries + 1;
        for attempt in 1..=attempts {
            let raw = self.backend.complete(request, &feedback)?;
            let problems = match extract_json(&raw) {
                Some(value) => {
                    let errors: Vec<String> =
                        validator.iter_errors(&value).map(|e| format!("{} at {}", e, e.instance_path)).collect();
                    if errors.is_empty() {
                        return Ok(value);
                    }
                    errors
                }
                None => vec!["the answer is not a JSON document".to_string()],
            };
            tracing::debug!(task = ?request.task, attempt, ?problems, "structured output rejected");
            feedback = problems;
        }
        Err(GatewayError::SchemaInvalidAfterRetries { attempts, last_error: feedback.join("; ") })
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::InvalidInput("cannot embed empty text".into()));
        }
        let _permit = self.permits.acquire();
        let vector = self.backend.embed(text)?;
        if vector.is_empty() || vector.iter().any(|x| !x.is_finite()) {
            return Err(GatewayError::BackendError { status: None, message: "embedding is empty or not finite".into() });
        }
        Ok(vector)
    }

    /// Classifies one chat message. `context` holds recent earlier messages
    /// of the same group, oldest first.
    pub fn tag_message(&self, text: &str, context: &[String]) -> Result<MessageCategory, GatewayError> {
        let request = Task::TagMessage.request(DEFAULT_PROBLEM, serde_json::json!({ "message": text, "context": context }));
        let value = self.complete_structured(&request)?;
        value["category"]
            .as_str()
            .and_then(MessageCategory::from_label)
            .ok_or_else(|| GatewayError::BackendError { status: None, message: "unknown category".into() })
    }

    pub fn complete_task(&self, task: Task, problem: &str, payload: Value) -> Result<Value, GatewayError> {
        self.complete_structured(&task.request(problem, payload))
    }
}

/// Pulls the first JSON object out of a model answer, tolerating code fences
/// and surrounding prose.
fn extract_json(raw: &str) -> Option<Value> {
    if let Ok(v) = serde_json::from_str::<Value>(raw.trim()) {
        return v.is_object().then_some(v);
    }
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    if end <= start {
        return None;
    }
    serde_json::from_str::<Value>(&raw[start..=end]).ok().filter(Value::is_object)
}
