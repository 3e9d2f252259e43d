use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{CompletionRequest, LlmClient, LlmError};

pub const API_KEY_ENV: &str = "C2B_LLM_API_KEY";

const PREAMBLE: &str =
    "You are a careful neuroscience research assistant. Follow the instruction exactly and reply with plain text only.";

/// Client for an OpenAI-style `/chat/completions` endpoint.
pub struct HttpChatClient {
    base_url: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

impl HttpChatClient {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChatClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            agent,
        }
    }

    /// Reads the key from `C2B_LLM_API_KEY`.
    pub fn from_env(base_url: impl Into<String>, model: impl Into<String>) -> Result<Self, LlmError> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| LlmError::MissingCredential(API_KEY_ENV))?;
        Ok(Self::new(base_url, model, Some(key)))
    }

    pub fn model(&self) -> &str {
        &self.model
    }
}

impl LlmClient for HttpChatClient {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let mut body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": PREAMBLE},
                {"role": "user", "content": req.prompt},
            ],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        });
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        let mut call = self
            .agent
            .post(&format!("{}/chat/completions", self.base_url))
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(&body)
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(LlmError::Status { status, body: text });
        }
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::Response(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Response("no choices in response".into()))
    }

    fn identifier(&self) -> String {
        format!("http:{}", self.model)
    }
}
