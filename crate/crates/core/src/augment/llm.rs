use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Forwarded only to backends that support seeded sampling.
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            max_tokens: 256,
            temperature: 0.0,
            seed: Some(0),
        }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Response(String),
    #[error("missing credential: set {0}")]
    MissingCredential(&'static str),
}

impl LlmError {
    /// Transport failures, rate limits and server errors are worth another try.
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// A text-completion backend.
pub trait LlmClient: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError>;

    /// Recorded in provenance and cache entries.
    fn identifier(&self) -> String;

    /// Deterministic clients stamp their output with time zero so runs are
    /// byte-reproducible.
    fn is_deterministic(&self) -> bool {
        false
    }
}

impl<T: LlmClient + ?Sized> LlmClient for &T {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        (**self).complete(req)
    }
    fn identifier(&self) -> String {
        (**self).identifier()
    }
    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

impl<T: LlmClient + ?Sized> LlmClient for Box<T> {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        (**self).complete(req)
    }
    fn identifier(&self) -> String {
        (**self).identifier()
    }
    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}
