//! HTTP backend speaking the OpenAI-compatible chat-completions protocol.
//!
//! Transport failures and 5xx responses are retried with exponential backoff
//! (3 attempts starting at 1 s by default). Any other non-success status is a
//! refusal and is not retried. Image attachments are inlined as base64 data
//! URLs.

use std::fs;
use std::path::Path;
use std::thread;
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{Backend, BackendTag, ChatMessage, ChatRequest, GatewayError, Reply, Usage};
use crate::model::config::BackendSettings;

pub struct LiveBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    max_attempts: u32,
    initial_backoff: Duration,
}

impl std::fmt::Debug for LiveBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveBackend")
            .field("endpoint", &self.endpoint)
            .field("max_attempts", &self.max_attempts)
            .finish_non_exhaustive()
    }
}

impl LiveBackend {
    pub fn new(settings: &BackendSettings, api_key: impl Into<String>) -> Result<Self, GatewayError> {
        let timeout = Duration::from_secs_f64(settings.request_timeout_secs.max(1.0));
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::InvalidRequest(format!("building HTTP client: {e}")))?;
        Ok(Self {
            client,
            endpoint: format!("{}/chat/completions", settings.base_url.trim_end_matches('/')),
            api_key: api_key.into(),
            max_attempts: settings.max_attempts.max(1),
            initial_backoff: Duration::from_secs_f64(settings.initial_backoff_secs.max(0.0)),
        })
    }

    /// Reads the API key from the environment variable named in `settings`.
    pub fn from_env(settings: &BackendSettings) -> Result<Self, GatewayError> {
        let key = std::env::var(&settings.api_key_env).map_err(|_| GatewayError::BackendRefused {
            status: None,
            message: format!("environment variable {} is not set", settings.api_key_env),
        })?;
        Self::new(settings, key)
    }

    fn body(&self, request: &ChatRequest) -> Result<Value, GatewayError> {
        let messages = request
            .outgoing_messages()
            .iter()
            .map(wire_message)
            .collect::<Result<Vec<_>, _>>()?;
        let mut body = json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.temperature,
        });
        if let Some(effort) = request.reasoning_effort {
            body["reasoning_effort"] = serde_json::to_value(effort).unwrap_or(Value::Null);
        }
        Ok(body)
    }

    fn attempt(&self, body: &Value) -> Result<Reply, Attempt> {
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.is_server_error() {
            return Err(Attempt::Retry(format!("HTTP {status}: {}", crate::util::tail(&text, 500))));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(GatewayError::BackendRefused {
                status: Some(status.as_u16()),
                message: crate::util::tail(&text, 2000).to_string(),
            }));
        }
        parse_completion(&text).map_err(Attempt::Fatal)
    }
}

enum Attempt {
    Retry(String),
    Fatal(GatewayError),
}

impl Backend for LiveBackend {
    fn reply(&self, request: &ChatRequest) -> Result<Reply, GatewayError> {
        let body = self.body(request)?;
        let mut backoff = self.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=self.max_attempts {
            match self.attempt(&body) {
                Ok(reply) => return Ok(reply),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("{}: attempt {attempt}/{} failed: {msg}", request.agent, self.max_attempts);
                    last = msg;
                    if attempt < self.max_attempts {
                        thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(GatewayError::Transport {
            attempts: self.max_attempts,
            message: last,
        })
    }

    fn tag(&self) -> BackendTag {
        BackendTag::Live
    }
}

fn wire_message(message: &ChatMessage) -> Result<Value, GatewayError> {
    let role = serde_json::to_value(message.role).unwrap_or(Value::Null);
    if message.attachments.is_empty() {
        return Ok(json!({ "role": role, "content": message.content }));
    }
    let mut parts = vec![json!({ "type": "text", "text": message.content })];
    for path in &message.attachments {
        match data_url(path)? {
            Some(url) => parts.push(json!({ "type": "image_url", "image_url": { "url": url } })),
            None => parts.push(json!({
                "type": "text",
                "text": format!("[figure {} is not an image format and was not attached]", path.display()),
            })),
        }
    }
    Ok(json!({ "role": role, "content": parts }))
}

fn data_url(path: &Path) -> Result<Option<String>, GatewayError> {
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => return Ok(None),
    };
    let bytes = fs::read(path)
        .map_err(|e| GatewayError::InvalidRequest(format!("reading attachment {}: {e}", path.display())))?;
    let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
    Ok(Some(format!("data:{mime};base64,{encoded}")))
}

fn parse_completion(text: &str) -> Result<Reply, GatewayError> {
    let refused = |m: &str| GatewayError::BackendRefused {
        status: None,
        message: m.to_string(),
    };
    let doc: Value = serde_json::from_str(text).map_err(|e| refused(&format!("malformed completion body: {e}")))?;
    let content = doc["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| refused("completion has no choices[0].message.content"))?;
    let usage = doc.get("usage").and_then(|u| {
        Some(Usage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
            completion_tokens: u.get("completion_tokens")?.as_u64()?,
            total_tokens: u.get("total_tokens")?.as_u64()?,
        })
    });
    Ok(Reply {
        text: content.to_string(),
        usage,
    })
}
