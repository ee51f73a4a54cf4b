//! The individual stages.

use std::fs;

use serde_json::json;

use super::rounds::{self, RepairPair};
use super::{Env, PipelineError, RefinementDecision, RefinementOutcome, RoundContinuity, RunRecord};
use crate::agent::{self, AgentError, Bindings, Decision, Generation, ReflectionOutcome, NO_FOLLOWUP};
use crate::model::store::{PLOT_SCRIPT_FILE, RESULTS_FILE};
use crate::model::{AgentRole, ResearchIdea, RoundArtifacts, RunHandle};
use crate::report::{self, DocumentMeta};
use crate::sandbox::{ExecRequest, ScriptSource};
use crate::util;

/// Runs the scientist pair and persists the accepted idea.
pub(super) fn ideate(env: Env<'_>) -> Result<ResearchIdea, PipelineError> {
    if env.run.config().tools.is_empty() {
        return Err(PipelineError::EmptyRegistry);
    }
    let ctx = env.ctx();
    let bindings = env.base_bindings();
    let generation = agent::run_generation(ctx, AgentRole::Scientist1, &bindings)?;
    let outcome = agent::run_reflection(ctx, AgentRole::Scientist2, &generation, &bindings)?;
    let idea = match &outcome.decision {
        Decision::Approved => agent::parse_idea(&generation.output)?,
        Decision::Revised(text) => agent::parse_idea(text)?,
        Decision::Halt(flag) => return Err(AgentError::Protocol(format!("idea reflector cannot halt ({flag})")).into()),
    };
    env.run.persist_idea(&idea)?;
    Ok(idea)
}

fn idea_bindings(env: Env<'_>, idea: &ResearchIdea) -> Bindings {
    let mut b = env.base_bindings();
    b.insert("idea", idea.to_labeled_text());
    b
}

/// Runs the coder pair and executes its script as round 0.
pub(super) fn initial_test(env: Env<'_>, idea: &ResearchIdea) -> Result<RoundArtifacts, PipelineError> {
    let ctx = env.ctx();
    let bindings = idea_bindings(env, idea);
    let generation = agent::run_generation(ctx, AgentRole::Coder1, &bindings)?;
    let outcome = agent::run_reflection(ctx, AgentRole::Coder2, &generation, &bindings)?;
    let script = agent::settled_script(&generation, &outcome)?;
    let pair = RepairPair {
        reflector: AgentRole::Coder2,
        partner: &generation,
        bindings: &bindings,
    };
    let (artifacts, _) = rounds::execute_round(env, 0, script, pair)?;
    Ok(artifacts)
}

/// Maps a refiner exchange onto a decision. The stop flag wins when the
/// reflector halts, or when it approves a generator reply carrying the flag;
/// otherwise the settled script is the follow-up.
pub fn refinement_decision(generation: &Generation, outcome: &ReflectionOutcome) -> Result<RefinementDecision, PipelineError> {
    let stop = |rationale: &str| RefinementDecision {
        outcome: RefinementOutcome::NoFollowUp,
        rationale: rationale.to_string(),
    };
    match &outcome.decision {
        Decision::Halt(_) => Ok(stop(&outcome.reply)),
        Decision::Approved if generation.output.contains(NO_FOLLOWUP) => Ok(stop(&generation.output)),
        Decision::Approved | Decision::Revised(_) => Ok(RefinementDecision {
            outcome: RefinementOutcome::FollowUp(agent::settled_script(generation, outcome)?),
            rationale: generation.output.clone(),
        }),
    }
}

/// One review of the current round by the refiner pair.
pub(super) struct Review {
    pub decision: RefinementDecision,
    pub generation: Generation,
    pub bindings: Bindings,
}

pub(super) fn refine_step(env: Env<'_>, idea: &ResearchIdea, current: &RoundArtifacts) -> Result<Review, PipelineError> {
    let ctx = env.ctx();
    let mut bindings = idea_bindings(env, idea);
    bindings.insert("round", current.round_index.to_string());
    bindings.insert("code", fs::read_to_string(&current.script_path)?);
    bindings.insert("results", fs::read_to_string(&current.results_path)?);
    bindings.insert("final_results", fs::read_to_string(&current.final_results_path)?);
    bindings.insert("notes", fs::read_to_string(&current.notes_path)?);
    let generation = agent::run_generation(ctx, AgentRole::Refiner1, &bindings)?;
    let outcome = agent::run_reflection(ctx, AgentRole::Refiner2, &generation, &bindings)?;
    let decision = refinement_decision(&generation, &outcome)?;
    Ok(Review {
        decision,
        generation,
        bindings,
    })
}

/// Records why the loop stopped early, so a resumed run goes straight to
/// documentation.
pub(super) fn write_stop_marker(run: &RunHandle, round: u32, rationale: &str) -> Result<(), PipelineError> {
    let marker = json!({ "round": round, "flag": NO_FOLLOWUP, "rationale": rationale });
    util::write_json(&run.layout().stop_path(), &marker)?;
    Ok(())
}

/// Executes the follow-up round requested by `review` and checks it against
/// `current`.
pub(super) fn follow_up(
    env: Env<'_>,
    current: &RoundArtifacts,
    script: ScriptSource,
    review: &Review,
    record: &mut RunRecord,
) -> Result<(RoundArtifacts, RoundContinuity), PipelineError> {
    let next = current.round_index + 1;
    let pair = RepairPair {
        reflector: AgentRole::Refiner2,
        partner: &review.generation,
        bindings: &review.bindings,
    };
    let (artifacts, round_record) = rounds::execute_round(env, next, script, pair)?;
    record.warnings.extend(round_record.continuity_warnings.iter().map(|w| format!("round {next}: {w}")));
    let continuity = rounds::continuity_between(current, &artifacts)?;
    Ok((artifacts, continuity))
}

/// Summary of every executed round for the plot designer and the writers.
/// Paths are relative to the plots directory, where the plot script runs.
fn rounds_block(rounds: &[RoundArtifacts]) -> Result<String, PipelineError> {
    let mut out = Vec::with_capacity(rounds.len());
    for r in rounds {
        let k = r.round_index;
        out.push(format!(
            "Round {k} (data: ../rounds/round_{k}/{RESULTS_FILE})\nfinal_results.json:\n{}\nnotes.txt:\n{}",
            fs::read_to_string(&r.final_results_path)?.trim(),
            fs::read_to_string(&r.notes_path)?.trim()
        ));
    }
    Ok(out.join("\n\n"))
}

const NOT_AVAILABLE: &str = "No fitted parameters are available.";

/// Plots, figure analysis, the five sections and the LaTeX document.
pub(super) fn document(env: Env<'_>, record: &mut RunRecord) -> Result<(), PipelineError> {
    let ctx = env.ctx();
    let layout = env.run.layout();
    let idea = record.idea.clone().expect("idea accepted before documentation");
    let mut bindings = idea_bindings(env, &idea);
    bindings.insert("rounds", rounds_block(&record.rounds)?);

    let script = report::design_plots(ctx, record.rounds.len(), &bindings)?;
    let plots_dir = layout.plots_dir();
    fs::create_dir_all(&plots_dir)?;
    let exec = env.executor.execute(&ExecRequest {
        source: &script,
        work_dir: &plots_dir,
        script_name: PLOT_SCRIPT_FILE,
        round: None,
        watch_root: Some(env.run.root()),
    })?;
    if !exec.violations.is_empty() {
        return Err(PipelineError::SandboxViolation {
            location: "plot script".into(),
            violations: exec.violations,
        });
    }
    let (figures, fit_params) = if exec.exit_status != 0 {
        record
            .warnings
            .push(format!("plot script exited with status {}; the report has no figures", exec.exit_status));
        (Vec::new(), NOT_AVAILABLE.to_string())
    } else {
        let fit = match report::read_fit_params(&plots_dir) {
            Ok(params) => serde_json::to_string_pretty(&params).map_err(std::io::Error::other)?,
            Err(e) if env.strict => return Err(e.into()),
            Err(e) => {
                record.warnings.push(e.to_string());
                NOT_AVAILABLE.to_string()
            }
        };
        (report::figure_files(&plots_dir)?, fit)
    };

    let analyses = report::analyze_figures(ctx, &idea.to_labeled_text(), &figures)?;
    let mut bundle = bindings;
    bundle.insert("analyses", report::analyses_block(&analyses));
    bundle.insert("fit_params", fit_params);
    let sections = report::write_sections(ctx, &bundle)?;
    let meta = DocumentMeta {
        title: document_title(&idea),
        run_id: env.run.run_id().to_string(),
    };
    let report_dir = layout.report_dir();
    report::assemble_document(&report_dir, &sections, &analyses, &meta)?;
    record.figures = analyses;
    record.report = sections;

    if env.run.config().compile_report {
        match report::compile_document(&report_dir) {
            Ok(Some(pdf)) => record.document = Some(pdf),
            Ok(None) => record.warnings.push("no LaTeX engine found; the document was not compiled".into()),
            Err(e) => record.warnings.push(e),
        }
    }
    Ok(())
}

fn document_title(idea: &ResearchIdea) -> String {
    let first = idea.idea.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("Research report");
    let mut title: String = first.chars().take(120).collect();
    if title.len() < first.len() {
        title.push_str("...");
    }
    title
}
