//! Stage orchestration: ideation, the initial test, the bounded refinement
//! loop and documentation.
//!
//! [`run_pipeline`] drives a run from whatever stage its directory contents
//! imply, so the same entry point starts fresh runs and resumes interrupted
//! ones. A stage error ends the run in `Failed` with the partial artifacts
//! left in place; the returned [`RunRecord`] carries the reason.
//!
//! Continuity between consecutive rounds is enforced (run-failing) under the
//! scripted backend and advisory under a live one, where violations are
//! appended to the round's `notes.txt` and to the record's warnings.

mod continuity;
mod resume;
mod rounds;
mod stages;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentContext, AgentError, Bindings, PromptSet};
use crate::gateway::{Backend, BackendTag};
use crate::model::state::IllegalTransition;
use crate::model::{
    ResearchIdea, ResearchQuery, RoundArtifacts, RunConfig, RunHandle, RunState, Stage, StageEvent, StoreError,
};
use crate::report::{FigureAnalysis, ReportError, ReportSection};
use crate::sandbox::{Executor, SandboxError, ScriptOrigin, ScriptSource};
use crate::toolkit::ToolLogError;
use crate::util;

pub use continuity::{check_continuity, ContinuityReport, ROOT_KEY};
pub use resume::rewind_calls;
pub use stages::refinement_decision;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("tool call log: {0}")]
    ToolLog(#[from] ToolLogError),
    #[error(transparent)]
    Transition(#[from] IllegalTransition),
    #[error("the tool registry is empty")]
    EmptyRegistry,
    #[error("round {round} script failed after {attempts} repair attempt(s): {detail}")]
    ScriptFailed { round: u32, attempts: u32, detail: String },
    #[error("{location}: sandbox policy violated: {}", violations.join("; "))]
    SandboxViolation { location: String, violations: Vec<String> },
    #[error("round {round} called tools missing from the registry: {}", tools.join(", "))]
    UnregisteredTools { round: u32, tools: Vec<String> },
    #[error("round {round} results.json is not append-only: {}", violations.join("; "))]
    Continuity { round: u32, violations: Vec<String> },
    #[error("refinement reflector halted while repairing round {0}")]
    RepairHalted(u32),
    #[error("pipeline I/O: {0}")]
    Io(#[from] io::Error),
}

/// What the refinement pair decided after reviewing a round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RefinementOutcome {
    FollowUp(ScriptSource),
    NoFollowUp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefinementDecision {
    pub outcome: RefinementOutcome,
    /// The reply that carried the decision.
    pub rationale: String,
}

/// Contents of `round.json`, written once a round's artifacts pass every
/// check. Its presence marks the round complete.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_index: u32,
    pub exit_status: i32,
    pub script_origin: Option<ScriptOrigin>,
    pub repair_attempts: u32,
    pub tool_calls: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub continuity_warnings: Vec<String>,
}

/// Continuity result for one consecutive pair of rounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundContinuity {
    pub from_round: u32,
    pub to_round: u32,
    pub report: ContinuityReport,
}

/// Everything a run produced, persisted as `run_record.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub status: Stage,
    pub n_test: u32,
    pub config: RunConfig,
    pub query: ResearchQuery,
    pub idea: Option<ResearchIdea>,
    pub rounds: Vec<RoundArtifacts>,
    pub continuity: Vec<RoundContinuity>,
    pub figures: Vec<FigureAnalysis>,
    pub report: Vec<ReportSection>,
    /// Compiled document, when compilation was requested and succeeded.
    pub document: Option<PathBuf>,
    pub warnings: Vec<String>,
    pub backend: BackendTag,
    pub prompt_hash: String,
    /// Per-role call counts when the last stage completed. Calls past these
    /// belong to interrupted work and are replayed on resume.
    #[serde(default)]
    pub committed_calls: BTreeMap<String, u32>,
}

impl RunRecord {
    fn new(run: &RunHandle, backend: BackendTag, prompt_hash: &str) -> Self {
        Self {
            run_id: run.run_id().to_string(),
            status: Stage::Ideation,
            n_test: run.n_test(),
            config: run.config().clone(),
            query: run.query().clone(),
            idea: None,
            rounds: Vec::new(),
            continuity: Vec::new(),
            figures: Vec::new(),
            report: Vec::new(),
            document: None,
            warnings: Vec::new(),
            backend,
            prompt_hash: prompt_hash.to_string(),
            committed_calls: BTreeMap::new(),
        }
    }

    /// Reads a persisted record.
    pub fn load(path: &std::path::Path) -> Result<Self, StoreError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            file: crate::model::store::RECORD_FILE.into(),
            message: e.to_string(),
        })
    }

    fn persist(&self, run: &RunHandle) -> io::Result<()> {
        util::write_json(&run.layout().record_path(), self)
    }

    /// Marks every call made so far as belonging to completed stages.
    fn commit(&mut self, run: &RunHandle) -> io::Result<()> {
        self.committed_calls = run.call_counts().into_iter().map(|(role, n)| (role.as_str().to_string(), n)).collect();
        self.persist(run)
    }
}

/// Borrowed handles shared by every stage.
#[derive(Clone, Copy)]
struct Env<'a> {
    run: &'a RunHandle,
    backend: &'a dyn Backend,
    executor: &'a dyn Executor,
    prompts: &'a PromptSet,
    /// Scripted backend: continuity and fit parameters are enforced.
    strict: bool,
}

impl<'a> Env<'a> {
    fn ctx(&self) -> AgentContext<'a> {
        AgentContext {
            backend: self.backend,
            sink: self.run,
            prompts: self.prompts,
            config: self.run.config(),
        }
    }

    /// Bindings every prompt may use.
    fn base_bindings(&self) -> Bindings {
        let query = self.run.query();
        let mut b = Bindings::new();
        b.insert("query", query.text.clone());
        b.insert("constraints", query.constraints_block());
        b.insert("tools", self.run.config().tools.render_prompt_block());
        b.insert("n_test", self.run.n_test().to_string());
        b
    }
}

/// Runs (or resumes) the pipeline on `run` until it is `Done` or `Failed`.
///
/// Prompts come from `config.prompts_dir` when set, otherwise from the
/// built-in set. `Err` is returned only when the prompts cannot be loaded or
/// the record cannot be written; stage failures are reported through the
/// record's status.
pub fn run_pipeline(run: &mut RunHandle, backend: &dyn Backend, executor: &dyn Executor) -> Result<RunRecord, PipelineError> {
    let prompts = match &run.config().prompts_dir {
        Some(dir) => PromptSet::load_dir(dir)?,
        None => PromptSet::builtin(),
    };
    let mut warnings = Vec::new();
    if let Some(previous) = run.config().prompt_hash.as_deref() {
        if previous != prompts.hash() {
            warnings.push(format!("prompt set changed since the run started (was {previous})"));
        }
    }
    run.set_prompt_hash(prompts.hash())?;
    let run: &RunHandle = run;
    let env = Env {
        run,
        backend,
        executor,
        prompts: &prompts,
        strict: backend.tag() == BackendTag::Scripted,
    };
    let mut record = RunRecord::new(run, backend.tag(), prompts.hash());
    record.warnings = warnings;

    if let Err(e) = drive(env, &mut record) {
        log::error!("run {} failed: {e}", run.run_id());
        record.status = Stage::Failed { reason: e.to_string() };
    }
    record.persist(run)?;
    Ok(record)
}

fn drive(env: Env<'_>, record: &mut RunRecord) -> Result<(), PipelineError> {
    let mut state: RunState = env.run.state()?;
    resume::restore(env, &mut state, record)?;
    record.status = state.stage.clone();
    record.commit(env.run)?;

    while !state.stage.is_terminal() {
        log::info!("run {}: {}", env.run.run_id(), state.stage.label());
        let event = match state.stage.clone() {
            Stage::Ideation => {
                record.idea = Some(stages::ideate(env)?);
                StageEvent::IdeaAccepted
            }
            Stage::InitialTesting => {
                let idea = record.idea.clone().expect("idea accepted before testing");
                let artifacts = stages::initial_test(env, &idea)?;
                record.rounds.push(artifacts);
                StageEvent::InitialTestCompleted
            }
            Stage::Refinement { round } if round >= state.n_test => StageEvent::BudgetExhausted,
            Stage::Refinement { round } => {
                let idea = record.idea.clone().expect("idea accepted before refinement");
                let current = record.rounds.last().cloned().expect("a round precedes refinement");
                debug_assert_eq!(current.round_index, round);
                let review = stages::refine_step(env, &idea, &current)?;
                match review.decision.outcome.clone() {
                    RefinementOutcome::NoFollowUp => {
                        stages::write_stop_marker(env.run, round, &review.decision.rationale)?;
                        StageEvent::NoFollowUp
                    }
                    RefinementOutcome::FollowUp(script) => {
                        let (artifacts, continuity) = stages::follow_up(env, &current, script, &review, record)?;
                        record.rounds.push(artifacts);
                        record.continuity.push(continuity);
                        StageEvent::FollowUpRequested
                    }
                }
            }
            Stage::Documentation => {
                stages::document(env, record)?;
                StageEvent::DocumentationCompleted
            }
            Stage::Done | Stage::Failed { .. } => unreachable!("loop exits on terminal stages"),
        };
        state = state.advance(event)?;
        debug_assert!(record.rounds.len() as u32 <= 1 + state.n_test);
        record.status = state.stage.clone();
        record.commit(env.run)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
