//! Documentation stage: plot design, figure analysis, section writing and
//! LaTeX assembly.
//!
//! Running the plot script is left to the caller, which owns the executor;
//! this module covers everything around it.

mod latex;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{self, AgentContext, AgentError, Bindings, Decision, PromptKind};
use crate::model::store::FIT_PARAMS_FILE;
use crate::model::{AgentRole, SectionKind};
use crate::sandbox::{SandboxError, ScriptSource};

pub use latex::{assemble_document, compile_document, latex_escape, DocumentMeta};

/// Figure formats the plot script may emit.
pub const FIGURE_EXTENSIONS: &[&str] = &["png", "pdf"];
pub const ANALYSIS_FIELDS: [&str; 3] = ["caption", "interpretation", "key insights"];
pub const NO_FIGURES_NOTICE: &str = "No figures were produced for this run.";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("report section {0:?} is missing")]
    MissingSection(SectionKind),
    #[error("plots need at least one successful round")]
    NoSuccessfulRounds,
    #[error("fit_params.json: {0}")]
    FitParams(String),
    #[error("report I/O: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureAnalysis {
    pub figure_path: PathBuf,
    pub caption: String,
    pub interpretation: String,
    pub key_insights: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSection {
    pub kind: SectionKind,
    pub body: String,
    pub highlight_box: String,
}

/// One entry of `fit_params.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitParams {
    pub model: String,
    pub params: BTreeMap<String, serde_json::Value>,
    pub r_squared: f64,
}

/// Runs the plot-designer pair and returns the script to execute.
/// `successful_rounds` guards the precondition.
pub fn design_plots(ctx: AgentContext<'_>, successful_rounds: usize, bindings: &Bindings) -> Result<ScriptSource, ReportError> {
    if successful_rounds == 0 {
        return Err(ReportError::NoSuccessfulRounds);
    }
    let generation = agent::run_generation(ctx, AgentRole::PlotDesigner1, bindings)?;
    let outcome = agent::run_reflection(ctx, AgentRole::PlotDesigner2, &generation, bindings)?;
    Ok(agent::settled_script(&generation, &outcome)?)
}

/// Figure files in `plots_dir`, sorted by name.
pub fn figure_files(plots_dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if !plots_dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(plots_dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| FIGURE_EXTENSIONS.contains(&e.as_str())) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Reads and validates `plots_dir/fit_params.json`.
pub fn read_fit_params(plots_dir: &Path) -> Result<BTreeMap<String, FitParams>, ReportError> {
    let path = plots_dir.join(FIT_PARAMS_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(ReportError::FitParams("file is missing".into())),
        Err(e) => return Err(e.into()),
    };
    let params: BTreeMap<String, FitParams> =
        serde_json::from_str(&text).map_err(|e| ReportError::FitParams(e.to_string()))?;
    if let Some((name, _)) = params.iter().find(|(_, p)| !p.r_squared.is_finite()) {
        return Err(ReportError::FitParams(format!("{name}: r_squared is not finite")));
    }
    Ok(params)
}

/// Parses a Plot_Analyzer reply.
pub fn parse_figure_analysis(figure_path: &Path, text: &str) -> Result<FigureAnalysis, AgentError> {
    let mut parts = agent::parse_labeled(text, &ANALYSIS_FIELDS)?.into_iter();
    let caption = parts.next().expect("caption");
    let interpretation = parts.next().expect("interpretation");
    let insights_text = parts.next().expect("insights");
    let key_insights: Vec<String> = insights_text
        .lines()
        .map(|l| l.trim().trim_start_matches(['-', '*', '•']).trim())
        .map(|l| {
            let digits = l.chars().take_while(|c| c.is_ascii_digit()).count();
            if digits > 0 && l[digits..].starts_with(['.', ')']) {
                l[digits + 1..].trim()
            } else {
                l
            }
        })
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    Ok(FigureAnalysis {
        figure_path: figure_path.to_path_buf(),
        caption,
        interpretation,
        key_insights,
    })
}

/// One multimodal Plot_Analyzer call per figure, with the image attached.
pub fn analyze_figures(ctx: AgentContext<'_>, idea_text: &str, figures: &[PathBuf]) -> Result<Vec<FigureAnalysis>, ReportError> {
    let mut out = Vec::with_capacity(figures.len());
    for figure in figures {
        let name = figure.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let bindings: Bindings = [("idea", idea_text.to_string()), ("figure", name)].into_iter().collect();
        let call = agent::invoke(ctx, AgentRole::PlotAnalyzer, PromptKind::Main, &bindings, &[], vec![figure.clone()])?;
        out.push(parse_figure_analysis(figure, &call.output)?);
    }
    Ok(out)
}

/// Renders analyses as prompt context for the writers.
pub fn analyses_block(analyses: &[FigureAnalysis]) -> String {
    if analyses.is_empty() {
        return NO_FIGURES_NOTICE.to_string();
    }
    analyses
        .iter()
        .map(|a| {
            let name = a.figure_path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default();
            let insights: Vec<String> = a.key_insights.iter().map(|i| format!("- {i}")).collect();
            format!(
                "Figure {name}\nCaption: {}\nInterpretation: {}\nKey insights:\n{}",
                a.caption,
                a.interpretation,
                insights.join("\n")
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Runs the writer pair for `kind`.
pub fn write_section(ctx: AgentContext<'_>, kind: SectionKind, bundle: &Bindings) -> Result<ReportSection, ReportError> {
    let (writer, reflector) = kind.roles();
    let draft = agent::run_generation(ctx, writer, bundle)?;
    let outcome = agent::run_reflection(ctx, reflector, &draft, bundle)?;
    let highlight_box = outcome.highlight_box.ok_or(AgentError::MissingHighlightBox(reflector))?;
    let body = match outcome.decision {
        Decision::Revised(body) => body,
        _ => agent::split_highlight_box(&draft.output).map_or_else(|| draft.output.trim().to_string(), |(_, rest)| rest),
    };
    Ok(ReportSection {
        kind,
        body,
        highlight_box,
    })
}

/// Writes all five sections concurrently; results come back in document
/// order.
pub fn write_sections(ctx: AgentContext<'_>, bundle: &Bindings) -> Result<Vec<ReportSection>, ReportError> {
    let results: Vec<Result<ReportSection, ReportError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = SectionKind::ALL
            .iter()
            .map(|&kind| scope.spawn(move || write_section(ctx, kind, bundle)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    });
    results.into_iter().collect()
}
