//! Rebuilding the in-memory record from a run directory.
//!
//! Completed rounds are never executed again. Work that was interrupted
//! (a round directory without `round.json`, a partial documentation stage)
//! is moved aside to `<name>.incomplete-<n>` and redone. Transcripts of the
//! interrupted stage are moved to `transcripts/interrupted-<n>/`, so the
//! redone stage issues the same per-role call indices as the first attempt.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use super::rounds::continuity_between;
use super::{Env, PipelineError, RoundRecord, RunRecord};
use crate::model::store::{FINAL_RESULTS_FILE, NOTES_FILE, RESULTS_FILE, ROUND_RECORD_FILE, SCRIPT_FILE, STDERR_LOG, STDOUT_LOG};
use crate::model::{AgentRole, RoundArtifacts, RunHandle, RunState, Stage};

/// Renames `path` to the first free `<path>.incomplete-<n>`.
fn archive(path: &Path) -> io::Result<PathBuf> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let target = (1..)
        .map(|n| path.with_file_name(format!("{name}.incomplete-{n}")))
        .find(|p| !p.exists())
        .expect("unbounded range");
    fs::rename(path, &target)?;
    Ok(target)
}

/// Moves transcripts recorded after the last completed stage out of the
/// way and resets the run's call counters to match. Returns the per-role
/// call counts that remain, which is where a replayed fixture set resumes.
///
/// Without a persisted record every transcript is kept.
pub fn rewind_calls(run: &RunHandle) -> Result<HashMap<AgentRole, u32>, PipelineError> {
    let layout = run.layout();
    let Ok(record) = RunRecord::load(&layout.record_path()) else {
        return Ok(run.call_counts());
    };
    let dir = layout.transcripts_dir();
    let mut stale = Vec::new();
    if dir.is_dir() {
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            let Some(stem) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".json")) else {
                continue;
            };
            let Some((role, index)) = stem.rsplit_once('_').and_then(|(r, i)| Some((r, i.parse::<u32>().ok()?))) else {
                continue;
            };
            if index >= record.committed_calls.get(role).copied().unwrap_or(0) {
                stale.push(path);
            }
        }
    }
    if !stale.is_empty() {
        let target = (1..)
            .map(|n| dir.join(format!("interrupted-{n}")))
            .find(|p| !p.exists())
            .expect("unbounded range");
        fs::create_dir(&target)?;
        for path in stale {
            fs::rename(&path, target.join(path.file_name().expect("file entry")))?;
        }
        run.reload_call_counts()?;
    }
    Ok(run.call_counts())
}

fn is_empty_dir(path: &Path) -> io::Result<bool> {
    Ok(!path.exists() || fs::read_dir(path)?.next().is_none())
}

fn load_round(dir: &Path, round: u32, wall_time: f64) -> Result<RoundArtifacts, PipelineError> {
    let text = fs::read_to_string(dir.join(ROUND_RECORD_FILE))?;
    let rr: RoundRecord = serde_json::from_str(&text).map_err(io::Error::other)?;
    Ok(RoundArtifacts {
        round_index: round,
        script_path: dir.join(SCRIPT_FILE),
        results_path: dir.join(RESULTS_FILE),
        final_results_path: dir.join(FINAL_RESULTS_FILE),
        notes_path: dir.join(NOTES_FILE),
        stdout_log: dir.join(STDOUT_LOG),
        stderr_log: dir.join(STDERR_LOG),
        exit_status: rr.exit_status,
        wall_time,
    })
}

/// Brings `record` in line with the directory and clears away interrupted
/// work for the stage `state` points at.
pub(super) fn restore(env: Env<'_>, state: &mut RunState, record: &mut RunRecord) -> Result<(), PipelineError> {
    let layout = env.run.layout();
    let previous = layout.record_path().is_file().then(|| RunRecord::load(&layout.record_path()).ok()).flatten();
    if let Some(prev) = &previous {
        for w in &prev.warnings {
            if !record.warnings.contains(w) {
                record.warnings.push(w.clone());
            }
        }
        record.committed_calls = prev.committed_calls.clone();
    }
    rewind_calls(env.run)?;

    for k in layout.round_indices()? {
        if k >= state.rounds_completed {
            let moved = archive(&layout.round_dir(k))?;
            record.warnings.push(format!("incomplete round {k} moved to {}", moved.display()));
        }
    }
    if state.stage == Stage::Ideation {
        return Ok(());
    }
    record.idea = Some(env.run.load_idea()?);

    for k in 0..state.rounds_completed {
        let wall_time = previous
            .as_ref()
            .and_then(|p| p.rounds.iter().find(|r| r.round_index == k))
            .map_or(0.0, |r| r.wall_time);
        record.rounds.push(load_round(&layout.round_dir(k), k, wall_time)?);
    }
    for pair in record.rounds.windows(2) {
        record.continuity.push(continuity_between(&pair[0], &pair[1])?);
    }

    match &state.stage {
        Stage::Documentation => {
            for dir in [layout.plots_dir(), layout.report_dir()] {
                if !is_empty_dir(&dir)? {
                    let moved = archive(&dir)?;
                    record.warnings.push(format!("partial documentation moved to {}", moved.display()));
                }
                fs::create_dir_all(&dir)?;
            }
        }
        Stage::Done => {
            if let Some(prev) = previous {
                record.figures = prev.figures;
                record.report = prev.report;
                record.document = prev.document;
            }
        }
        _ => {}
    }
    Ok(())
}
