//! Executing one round: directory setup, the repair pass and the checks that
//! make a round complete.

use std::fs;
use std::io;
use std::path::Path;

use serde_json::Value;

use super::{check_continuity, Env, PipelineError, RoundContinuity, RoundRecord};
use crate::agent::{self, Bindings, Decision, Generation};
use crate::model::store::{FAILED_ATTEMPT_DIR, FINAL_RESULTS_FILE, NOTES_FILE, RESULTS_FILE, ROUND_RECORD_FILE, SCRIPT_FILE};
use crate::model::{AgentRole, RoundArtifacts};
use crate::sandbox::{self, ExecRequest, ExecutionRecord, ScriptSource};
use crate::toolkit;
use crate::util;

/// Characters of stderr handed to the reflector on a repair pass.
pub const STDERR_TAIL_CHARS: usize = 4000;

/// The exchange a failed round's script came from, for the repair pass.
pub(super) struct RepairPair<'a> {
    pub reflector: AgentRole,
    pub partner: &'a Generation,
    pub bindings: &'a Bindings,
}

/// Copies the previous round's artifacts into a new round directory, so a
/// follow-up script can extend them in place.
fn seed(env: Env<'_>, round: u32, dir: &Path) -> io::Result<()> {
    if round == 0 {
        return Ok(());
    }
    let prev = env.run.layout().round_dir(round - 1);
    for name in [RESULTS_FILE, FINAL_RESULTS_FILE, NOTES_FILE] {
        fs::copy(prev.join(name), dir.join(name))?;
    }
    Ok(())
}

/// Name of the directory holding the `n`th failed attempt (1-based).
pub fn failed_attempt_name(n: u32) -> String {
    if n == 1 {
        FAILED_ATTEMPT_DIR.to_string()
    } else {
        format!("{FAILED_ATTEMPT_DIR}_{n}")
    }
}

/// Moves everything a failed attempt left in `dir` into its archive folder.
fn archive_attempt(dir: &Path, n: u32) -> io::Result<()> {
    let target = dir.join(failed_attempt_name(n));
    fs::create_dir(&target)?;
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        if name.to_string_lossy().starts_with(FAILED_ATTEMPT_DIR) {
            continue;
        }
        fs::rename(entry.path(), target.join(&name))?;
    }
    Ok(())
}

fn failure_detail(exec: &ExecutionRecord, cause: Option<&sandbox::SandboxError>) -> String {
    let stderr = fs::read_to_string(&exec.stderr_path).unwrap_or_default();
    let mut detail = String::new();
    if exec.timed_out {
        detail.push_str("The script was killed on timeout.\n");
    } else if exec.exit_status != 0 {
        detail.push_str(&format!("The script exited with status {}.\n", exec.exit_status));
    }
    if let Some(cause) = cause {
        detail.push_str(&format!("{cause}\n"));
    }
    detail.push_str(util::tail(&stderr, STDERR_TAIL_CHARS));
    detail
}

/// Executes `script` as round `round`.
///
/// A failing script (nonzero exit, missing or malformed artifacts) is handed
/// back to the pair's reflector through its repair prompt, up to
/// `config.repair_passes` times. Each failed attempt is moved to
/// `failed_attempt[_n]` inside the round directory before the next one runs.
/// Sandbox policy violations and unregistered tool calls fail immediately.
pub(super) fn execute_round(
    env: Env<'_>,
    round: u32,
    script: ScriptSource,
    pair: RepairPair<'_>,
) -> Result<(RoundArtifacts, RoundRecord), PipelineError> {
    let config = env.run.config();
    let dir = env.run.layout().round_dir(round);
    fs::create_dir_all(env.run.layout().rounds_dir())?;
    fs::create_dir(&dir)?;
    seed(env, round, &dir)?;

    let mut script = script;
    let mut attempts = 0;
    let (artifacts, exec) = loop {
        let exec = env.executor.execute(&ExecRequest {
            source: &script,
            work_dir: &dir,
            script_name: SCRIPT_FILE,
            round: Some(round),
            watch_root: Some(env.run.root()),
        })?;
        if !exec.violations.is_empty() {
            return Err(PipelineError::SandboxViolation {
                location: format!("round {round}"),
                violations: exec.violations,
            });
        }
        let collected = if exec.exit_status == 0 {
            sandbox::collect_artifacts(&dir, round, &exec).map_err(Some)
        } else {
            Err(None)
        };
        let cause = match collected {
            Ok(artifacts) => break (artifacts, exec),
            Err(cause) => cause,
        };
        let detail = failure_detail(&exec, cause.as_ref());
        if attempts >= config.repair_passes {
            return Err(PipelineError::ScriptFailed {
                round,
                attempts,
                detail: util::tail(&detail, 500).to_string(),
            });
        }
        attempts += 1;
        log::warn!("round {round} failed; repair attempt {attempts}");
        archive_attempt(&dir, attempts)?;
        seed(env, round, &dir)?;

        let mut bindings = pair.bindings.clone();
        bindings.insert("code", script.body.clone());
        bindings.insert("stderr", detail);
        let outcome = agent::run_repair(env.ctx(), pair.reflector, pair.partner, &bindings)?;
        script = match outcome.decision {
            Decision::Revised(payload) => sandbox::extract_script(&payload)?.with_origin(pair.reflector, outcome.call_index),
            Decision::Approved => script,
            Decision::Halt(_) => return Err(PipelineError::RepairHalted(round)),
        };
    };

    let calls = toolkit::read_tool_call_log(&dir)?;
    let unknown = toolkit::unregistered_tools(&calls, &config.tools);
    if !unknown.is_empty() {
        return Err(PipelineError::UnregisteredTools { round, tools: unknown });
    }

    let mut continuity_warnings = Vec::new();
    if round > 0 {
        let prev = env.run.layout().round_dir(round - 1);
        let report = check_continuity(&read_json(&prev.join(RESULTS_FILE))?, &read_json(&dir.join(RESULTS_FILE))?);
        if !report.is_clean() {
            if env.strict {
                return Err(PipelineError::Continuity {
                    round,
                    violations: report.violations,
                });
            }
            let mut notes = fs::OpenOptions::new().append(true).open(dir.join(NOTES_FILE))?;
            for v in &report.violations {
                io::Write::write_all(&mut notes, format!("\n[continuity warning] {v}").as_bytes())?;
            }
            continuity_warnings = report.violations;
        }
    }

    let record = RoundRecord {
        round_index: round,
        exit_status: exec.exit_status,
        script_origin: script.origin,
        repair_attempts: attempts,
        tool_calls: calls.len(),
        continuity_warnings,
    };
    util::write_json(&dir.join(ROUND_RECORD_FILE), &record)?;
    Ok((artifacts, record))
}

fn read_json(path: &Path) -> Result<Value, PipelineError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        PipelineError::Sandbox(sandbox::SandboxError::MalformedArtifact {
            name: RESULTS_FILE,
            message: e.to_string(),
        })
    })
}

/// Continuity between two executed rounds' `results.json`.
pub(super) fn continuity_between(prev: &RoundArtifacts, next: &RoundArtifacts) -> Result<RoundContinuity, PipelineError> {
    Ok(RoundContinuity {
        from_round: prev.round_index,
        to_round: next.round_index,
        report: check_continuity(&read_json(&prev.results_path)?, &read_json(&next.results_path)?),
    })
}
