//! Transcript persistence: one JSON document per model call.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ChatMessage, ChatRequest, ChatResponse, Usage};
use crate::model::{AgentRole, RunHandle};
use crate::util;

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("transcript store is not writable: {0}")]
    StoreUnwritable(#[from] io::Error),
    #[error("transcript {0} already exists with different content")]
    Conflict(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptFile {
    pub role: String,
    pub index: u32,
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
    pub usage: Option<Usage>,
}

/// Writes `transcripts_dir/<role>_<index>.json`. Rewriting identical content
/// is a no-op; different content at the same key is a conflict.
pub fn record_transcript(
    transcripts_dir: &Path,
    role: &str,
    index: u32,
    request: &ChatRequest,
    response: &ChatResponse,
) -> Result<PathBuf, TranscriptError> {
    let doc = TranscriptFile {
        role: role.to_string(),
        index,
        model: request.model.clone(),
        temperature: request.temperature,
        messages: response.transcript.clone(),
        usage: response.usage,
    };
    let mut bytes = serde_json::to_vec_pretty(&doc).map_err(io::Error::other)?;
    bytes.push(b'\n');
    fs::create_dir_all(transcripts_dir)?;
    let path = transcripts_dir.join(format!("{role}_{index}.json"));
    match fs::read(&path) {
        Ok(existing) if util::sha256_hex(&existing) == util::sha256_hex(&bytes) => return Ok(path),
        Ok(_) => return Err(TranscriptError::Conflict(path)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => {}
        Err(e) => return Err(e.into()),
    }
    util::write_atomic(&path, &bytes)?;
    Ok(path)
}

/// Destination for agent transcripts. `record` returns the per-role call
/// index assigned to the transcript.
pub trait TranscriptSink: Sync {
    fn record(&self, role: AgentRole, request: &ChatRequest, response: &ChatResponse) -> Result<u32, TranscriptError>;
}

impl TranscriptSink for RunHandle {
    fn record(&self, role: AgentRole, request: &ChatRequest, response: &ChatResponse) -> Result<u32, TranscriptError> {
        let index = self.next_call_index(role);
        record_transcript(&self.layout().transcripts_dir(), role.as_str(), index, request, response)?;
        Ok(index)
    }
}

/// Keeps transcripts in memory; for tests and dry runs.
#[derive(Debug, Default)]
pub struct MemorySink {
    entries: Mutex<Vec<(AgentRole, Vec<ChatMessage>)>>,
}

impl MemorySink {
    pub fn entries(&self) -> Vec<(AgentRole, Vec<ChatMessage>)> {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl TranscriptSink for MemorySink {
    fn record(&self, role: AgentRole, _request: &ChatRequest, response: &ChatResponse) -> Result<u32, TranscriptError> {
        let mut entries = self.entries.lock().unwrap_or_else(|p| p.into_inner());
        let index = entries.iter().filter(|(r, _)| *r == role).count() as u32;
        entries.push((role, response.transcript.clone()));
        Ok(index)
    }
}
