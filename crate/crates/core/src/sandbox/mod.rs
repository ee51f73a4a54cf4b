//! Script extraction, sandboxed execution and artifact collection.
//!
//! Exit status conventions: 0 success, 124 timeout, anything else is a script
//! failure. A process killed by a signal reports `128 + signal`.

mod process;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::store::{FINAL_RESULTS_FILE, NOTES_FILE, RESULTS_FILE, SCRIPT_FILE, STDERR_LOG, STDOUT_LOG};
use crate::model::{AgentRole, RoundArtifacts};

pub use process::{Sandbox, ALLOWED_ENV};

/// Exit status reported for a script killed on timeout.
pub const TIMEOUT_EXIT: i32 = 124;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("reply contains no fenced code block")]
    NoCodeBlock,
    #[error("failed to start {command}: {source}")]
    SpawnFailure { command: String, source: io::Error },
    #[error("artifact {0} is missing")]
    MissingArtifact(&'static str),
    #[error("artifact {name} is malformed: {message}")]
    MalformedArtifact { name: &'static str, message: String },
    #[error("sandbox I/O: {0}")]
    Io(#[from] io::Error),
}

/// Where a script came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptOrigin {
    pub role: AgentRole,
    pub call_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptSource {
    pub body: String,
    pub language_hint: Option<String>,
    pub origin: Option<ScriptOrigin>,
}

impl ScriptSource {
    pub fn with_origin(mut self, role: AgentRole, call_index: u32) -> Self {
        self.origin = Some(ScriptOrigin { role, call_index });
        self
    }

    /// The script as a fenced block.
    pub fn fenced(&self) -> String {
        let fence = if self.body.contains("```") { "````" } else { "```" };
        format!("{fence}{}\n{}\n{fence}", self.language_hint.as_deref().unwrap_or(""), self.body)
    }
}

/// Returns the first non-empty fenced code block of `reply`. Fences are runs
/// of three or more backticks; the closing fence must be at least as long as
/// the opening one.
pub fn extract_script(reply: &str) -> Result<ScriptSource, SandboxError> {
    let mut lines = reply.lines();
    while let Some(line) = lines.next() {
        let trimmed = line.trim_start();
        let ticks = trimmed.chars().take_while(|c| *c == '`').count();
        if ticks < 3 {
            continue;
        }
        let info = trimmed[ticks..].trim();
        if info.contains('`') {
            continue;
        }
        let mut body = Vec::new();
        let mut closed = false;
        for inner in lines.by_ref() {
            let t = inner.trim();
            if t.len() >= ticks && t.chars().all(|c| c == '`') {
                closed = true;
                break;
            }
            body.push(inner);
        }
        if !closed {
            break;
        }
        let body = body.join("\n");
        if body.trim().is_empty() {
            continue;
        }
        let language_hint = info.split_whitespace().next().map(str::to_string);
        return Ok(ScriptSource {
            body,
            language_hint,
            origin: None,
        });
    }
    Err(SandboxError::NoCodeBlock)
}

/// What to run and where.
#[derive(Debug, Clone)]
pub struct ExecRequest<'a> {
    pub source: &'a ScriptSource,
    /// Working directory; must exist.
    pub work_dir: &'a Path,
    /// File name the script is written to inside `work_dir`.
    pub script_name: &'a str,
    /// Exported to the script as the round index.
    pub round: Option<u32>,
    /// Tree watched for writes outside `work_dir` (typically the run root).
    pub watch_root: Option<&'a Path>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub exit_status: i32,
    /// Seconds.
    pub wall_time: f64,
    pub stdout_path: PathBuf,
    pub stderr_path: PathBuf,
    pub timed_out: bool,
    /// Changes detected under the watch root outside the working directory.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
}

impl ExecutionRecord {
    pub fn succeeded(&self) -> bool {
        self.exit_status == 0 && self.violations.is_empty()
    }
}

/// Runs scripts. The production implementation is [`Sandbox`]; tests may
/// substitute an in-process fake.
pub trait Executor: Send + Sync {
    fn execute(&self, request: &ExecRequest<'_>) -> Result<ExecutionRecord, SandboxError>;
}

/// Names of required round artifacts in `round_dir` that are absent.
pub fn missing_artifacts(round_dir: &Path) -> Vec<&'static str> {
    [RESULTS_FILE, FINAL_RESULTS_FILE, NOTES_FILE]
        .into_iter()
        .filter(|name| !round_dir.join(name).is_file())
        .collect()
}

/// Verifies the round's artifact bundle and assembles its record.
pub fn collect_artifacts(round_dir: &Path, round_index: u32, exec: &ExecutionRecord) -> Result<RoundArtifacts, SandboxError> {
    for name in [RESULTS_FILE, FINAL_RESULTS_FILE] {
        let text = match fs::read_to_string(round_dir.join(name)) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(SandboxError::MissingArtifact(name)),
            Err(e) => {
                return Err(SandboxError::MalformedArtifact {
                    name,
                    message: e.to_string(),
                })
            }
        };
        serde_json::from_str::<serde_json::Value>(&text).map_err(|e| SandboxError::MalformedArtifact {
            name,
            message: e.to_string(),
        })?;
    }
    if !round_dir.join(NOTES_FILE).is_file() {
        return Err(SandboxError::MissingArtifact(NOTES_FILE));
    }
    Ok(RoundArtifacts {
        round_index,
        script_path: round_dir.join(SCRIPT_FILE),
        results_path: round_dir.join(RESULTS_FILE),
        final_results_path: round_dir.join(FINAL_RESULTS_FILE),
        notes_path: round_dir.join(NOTES_FILE),
        stdout_log: round_dir.join(STDOUT_LOG),
        stderr_log: round_dir.join(STDERR_LOG),
        exit_status: exec.exit_status,
        wall_time: exec.wall_time,
    })
}
