use std::time::Duration;

use serde_json::{json, Value};

use super::backend::{BackendError, BackendKind, BackendRequest, PerceptionBackend};

pub const JSON_RESPONSE_INSTRUCTION: &str =
    "You are a careful perception model. Always answer with one valid JSON object and no other text.";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpBackendConfig {
    /// Full chat-completions URL, e.g. `https://api.openai.com/v1/chat/completions`.
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

/// Backend for any OpenAI-compatible chat-completions endpoint.
///
/// Each call posts the prompt (plus the frame reference as an image part when
/// it is a URL or data URI) together with the stage's temperature and token
/// limit, and returns the assistant message content.
pub struct HttpBackend {
    config: HttpBackendConfig,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }

    pub fn request_body(&self, request: &BackendRequest<'_>) -> Value {
        let user_content = match request.frame_ref.filter(|r| is_image_url(r)) {
            Some(url) => json!([
                {"type": "text", "text": request.prompt},
                {"type": "image_url", "image_url": {"url": url}},
            ]),
            None => Value::String(request.prompt.to_string()),
        };
        json!({
            "model": self.config.model,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": JSON_RESPONSE_INSTRUCTION},
                {"role": "user", "content": user_content},
            ],
        })
    }
}

fn is_image_url(reference: &str) -> bool {
    ["http://", "https://", "data:"].iter().any(|p| reference.starts_with(p))
}

impl PerceptionBackend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Http
    }

    fn complete(&mut self, request: &BackendRequest<'_>) -> Result<String, BackendError> {
        let body = self.request_body(request).to_string();
        let mut call = self.agent.post(&self.config.url).content_type("application/json");
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = call.send(body.as_str()).map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status, body: text });
        }
        assistant_content(&text)
    }
}

fn assistant_content(body: &str) -> Result<String, BackendError> {
    let value: Value = serde_json::from_str(body).map_err(|e| BackendError::MalformedReply(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::MalformedReply("missing choices[0].message.content".into()))
}
