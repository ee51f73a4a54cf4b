//! Uniform chat-completion interface.
//!
//! A [`Backend`] only produces reply text; [`complete`] validates the request
//! and builds the transcript the same way for every backend:
//!
//! - empty history: `[system, user, assistant]`
//! - non-empty history: `history ++ [user, assistant]`
//!
//! Callers own their history; nothing here mutates it.

mod live;
mod scripted;
mod transcript;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ReasoningEffort;

pub use live::LiveBackend;
pub use scripted::{history_violations, load_fixtures, CallRecord, Fixture, FixtureError, ScriptedBackend};
pub use transcript::{record_transcript, MemorySink, TranscriptError, TranscriptFile, TranscriptSink};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend refused the request (status {status:?}): {message}")]
    BackendRefused { status: Option<u16>, message: String },
    #[error("no fixture for ({role}, {index})")]
    FixtureMiss { role: String, index: u32 },
    #[error("backend returned an empty reply for {0}")]
    EmptyReply(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
    /// Image files attached to this message.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<PathBuf>,
}

impl ChatMessage {
    pub fn new(role: MessageRole, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            attachments: Vec::new(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(MessageRole::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(MessageRole::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(MessageRole::Assistant, content)
    }

    pub fn is_valid(&self) -> bool {
        !self.content.is_empty() || !self.attachments.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Agent role issuing the call. Used for fixture routing and logs; never
    /// sent upstream.
    pub agent: String,
    pub system_message: String,
    pub prompt: String,
    pub model: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_effort: Option<ReasoningEffort>,
    #[serde(default)]
    pub msg_history: Vec<ChatMessage>,
    /// Images attached to the user prompt.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<PathBuf>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidRequest(format!("{}: {m}", self.agent)));
        if self.system_message.trim().is_empty() {
            return bad("system message is empty");
        }
        if self.prompt.trim().is_empty() {
            return bad("prompt is empty");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature outside [0, 2]");
        }
        if let Some(first) = self.msg_history.first() {
            if first.role != MessageRole::System {
                return bad("history must begin with a system message");
            }
        }
        if self.msg_history.iter().any(|m| !m.is_valid()) {
            return bad("history contains an empty message");
        }
        Ok(())
    }

    fn user_message(&self) -> ChatMessage {
        ChatMessage {
            role: MessageRole::User,
            content: self.prompt.clone(),
            attachments: self.attachments.clone(),
        }
    }

    /// Messages sent upstream: the caller's own system message, then the
    /// history after its leading system message, then the prompt.
    pub fn outgoing_messages(&self) -> Vec<ChatMessage> {
        let mut out = vec![ChatMessage::system(self.system_message.clone())];
        out.extend(self.msg_history.iter().skip(1).cloned());
        out.push(self.user_message());
        out
    }

    /// Transcript after this call returns `reply`.
    pub fn transcript_with(&self, reply: &str) -> Vec<ChatMessage> {
        let mut transcript = self.msg_history.clone();
        if transcript.is_empty() {
            transcript.push(ChatMessage::system(self.system_message.clone()));
        }
        transcript.push(self.user_message());
        transcript.push(ChatMessage::assistant(reply));
        transcript
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendTag {
    Live,
    Scripted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub text: String,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub transcript: Vec<ChatMessage>,
    pub usage: Option<Usage>,
    pub backend_tag: BackendTag,
}

/// A chat-completion provider. Implementations must be safe to call from
/// several threads.
pub trait Backend: Send + Sync {
    fn reply(&self, request: &ChatRequest) -> Result<Reply, GatewayError>;

    fn tag(&self) -> BackendTag;
}

/// Runs one chat completion and assembles its transcript.
pub fn complete(backend: &dyn Backend, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
    request.validate()?;
    let reply = backend.reply(request)?;
    if reply.text.is_empty() {
        return Err(GatewayError::EmptyReply(request.agent.clone()));
    }
    Ok(ChatResponse {
        transcript: request.transcript_with(&reply.text),
        text: reply.text,
        usage: reply.usage,
        backend_tag: backend.tag(),
    })
}

#[cfg(test)]
pub(crate) fn test_request(agent: &str, history: Vec<ChatMessage>) -> ChatRequest {
    ChatRequest {
        agent: agent.to_string(),
        system_message: "You are a careful scientist.".into(),
        prompt: "Propose an idea.".into(),
        model: "m".into(),
        temperature: 0.0,
        reasoning_effort: None,
        msg_history: history,
        attachments: Vec::new(),
    }
}
