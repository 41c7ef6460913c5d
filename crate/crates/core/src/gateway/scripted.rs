use std::collections::VecDeque;
use std::sync::Mutex;

use super::{Backend, GatewayError, StructuredRequest, StubBackend, Task};

/// Backend that replays canned completions in order, then falls back to
/// the stub (or fails, see [`ScriptedBackend::failing`]). Records every
/// completion call as `(task, feedback)`.
#[derive(Debug)]
pub struct ScriptedBackend {
    responses: Mutex<VecDeque<Result<String, GatewayError>>>,
    calls: Mutex<Vec<(Task, Vec<String>)>>,
    fallback: Option<StubBackend>,
}

impl ScriptedBackend {
    pub fn new(responses: Vec<Result<String, GatewayError>>) -> Self {
        Self { responses: Mutex::new(responses.into()), calls: Mutex::new(Vec::new()), fallback: Some(StubBackend::new(0)) }
    }

    /// A backend that is down: every call fails with `Unavailable`.
    pub fn failing() -> Self {
        Self { responses: Mutex::new(VecDeque::new()), calls: Mutex::new(Vec::new()), fallback: None }
    }

    pub fn push(&self, response: Result<String, GatewayError>) {
        self.responses.lock().unwrap().push_back(response);
    }

    pub fn calls(&self) -> Vec<(Task, Vec<String>)> {
        self.calls.lock().unwrap().clone()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &StructuredRequest, feedback: &[String]) -> Result<String, GatewayError> {
        self.calls.lock().unwrap().push((request.task, feedback.to_vec()));
        if let Some(next) = self.responses.lock().unwrap().pop_front() {
            return next;
        }
        match &self.fallback {
            Some(stub) => stub.complete(request, feedback),
            None => Err(GatewayError::Unavailable("scripted backend has no responses".into())),
        }
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        match &self.fallback {
            Some(stub) => stub.embed(text),
            None => Err(GatewayError::Unavailable("scripted backend has no responses".into())),
        }
    }
}
