//! Generation/reflection protocol.
//!
//! A generator is always called with an empty history. Its reflector partner
//! is called with the generator's full transcript as history, and its reply is
//! classified into a [`Decision`] by deterministic rules that depend on the
//! kind of payload the pair produces (see [`ReplyFormat`]).

mod idea;
mod template;

use thiserror::Error;

use crate::gateway::{self, Backend, ChatMessage, ChatRequest, ChatResponse, GatewayError, MessageRole, TranscriptError, TranscriptSink};
use crate::model::{AgentKind, AgentRole, ModelBinding, RunConfig};
use crate::sandbox;

pub use idea::{parse_idea, parse_labeled};
pub use template::{Bindings, PromptSet, PromptTemplate, RolePrompt, PLACEHOLDERS};

/// Termination flag a refinement reflector emits to end the testing loop.
pub const NO_FOLLOWUP: &str = "NO_FOLLOWUP";
/// Line a reflector emits to accept its partner's output unchanged.
pub const APPROVED: &str = "APPROVED";
pub const HIGHLIGHT_BEGIN: &str = r"\begin{highlightbox}";
pub const HIGHLIGHT_END: &str = r"\end{highlightbox}";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("no binding for placeholder {{{0}}}")]
    UnboundPlaceholder(String),
    #[error("template syntax error at {0}")]
    TemplateSyntax(String),
    #[error("prompt file {file}: {message}")]
    PromptLoad { file: String, message: String },
    #[error("no prompt defined for {0}")]
    MissingPrompt(AgentRole),
    #[error("{0} has no repair prompt")]
    NoRepairPrompt(AgentRole),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("{role} reply matches no classification rule: {excerpt:?}")]
    UnparseableReflection { role: AgentRole, excerpt: String },
    #[error("reply is missing the {0} section")]
    MissingField(String),
    #[error("section {0} appears twice")]
    DuplicateField(String),
    #[error("{0} reply has no highlight box")]
    MissingHighlightBox(AgentRole),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
}

/// What everything in the agent layer needs to issue a call.
#[derive(Clone, Copy)]
pub struct AgentContext<'a> {
    pub backend: &'a dyn Backend,
    pub sink: &'a dyn TranscriptSink,
    pub prompts: &'a PromptSet,
    pub config: &'a RunConfig,
}

/// A role resolved against the prompt set and run configuration.
#[derive(Debug, Clone)]
pub struct AgentSpec {
    pub role: AgentRole,
    pub kind: AgentKind,
    pub system_template: PromptTemplate,
    pub prompt_template: PromptTemplate,
    pub repair_template: Option<PromptTemplate>,
    pub model_binding: ModelBinding,
}

impl AgentSpec {
    pub fn resolve(role: AgentRole, prompts: &PromptSet, config: &RunConfig) -> Self {
        let p = prompts.get(role);
        Self {
            role,
            kind: role.kind(),
            system_template: p.system.clone(),
            prompt_template: p.prompt.clone(),
            repair_template: p.repair.clone(),
            model_binding: config.binding(role).clone(),
        }
    }
}

/// Which prompt of a role to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Main,
    Repair,
}

/// A completed call: the reply, its transcript and its transcript index.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub role: AgentRole,
    pub output: String,
    pub transcript: Vec<ChatMessage>,
    pub call_index: u32,
}

/// Issues one call for `role` and records its transcript.
///
/// Generators and standalone agents must receive an empty history;
/// reflectors must receive a complete partner transcript.
pub fn invoke(
    ctx: AgentContext<'_>,
    role: AgentRole,
    which: PromptKind,
    bindings: &Bindings,
    history: &[ChatMessage],
    attachments: Vec<std::path::PathBuf>,
) -> Result<Generation, AgentError> {
    check_history(role, history)?;
    let spec = AgentSpec::resolve(role, ctx.prompts, ctx.config);
    let prompt_template = match which {
        PromptKind::Main => &spec.prompt_template,
        PromptKind::Repair => spec.repair_template.as_ref().ok_or(AgentError::NoRepairPrompt(role))?,
    };
    let request = ChatRequest {
        agent: role.as_str().to_string(),
        system_message: spec.system_template.render(bindings)?,
        prompt: prompt_template.render(bindings)?,
        model: spec.model_binding.model.clone(),
        temperature: spec.model_binding.temperature,
        reasoning_effort: spec.model_binding.reasoning_effort,
        msg_history: history.to_vec(),
        attachments,
    };
    let response: ChatResponse = gateway::complete(ctx.backend, &request)?;
    let call_index = ctx.sink.record(role, &request, &response)?;
    Ok(Generation {
        role,
        output: response.text,
        transcript: response.transcript,
        call_index,
    })
}

fn check_history(role: AgentRole, history: &[ChatMessage]) -> Result<(), AgentError> {
    match role.kind() {
        AgentKind::Generator | AgentKind::Standalone if !history.is_empty() => Err(AgentError::Protocol(format!(
            "{role} must be called with an empty history, got {} message(s)",
            history.len()
        ))),
        AgentKind::Reflector if history.last().is_none_or(|m| m.role != MessageRole::Assistant) => {
            Err(AgentError::Protocol(format!("{role} needs a complete partner transcript as history")))
        }
        _ => Ok(()),
    }
}

/// Runs a generator (or standalone agent) with an empty history.
pub fn run_generation(ctx: AgentContext<'_>, role: AgentRole, bindings: &Bindings) -> Result<Generation, AgentError> {
    invoke(ctx, role, PromptKind::Main, bindings, &[], Vec::new())
}

/// Reflector verdict on its partner's output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Approved,
    Revised(String),
    Halt(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionOutcome {
    pub decision: Decision,
    pub transcript: Vec<ChatMessage>,
    /// Present for section reflectors only.
    pub highlight_box: Option<String>,
    pub reply: String,
    pub role: AgentRole,
    pub call_index: u32,
}

/// The script a generator/reflector exchange settled on: the revision if
/// there is one, otherwise the generator's block.
pub fn settled_script(generation: &Generation, outcome: &ReflectionOutcome) -> Result<sandbox::ScriptSource, sandbox::SandboxError> {
    match &outcome.decision {
        Decision::Revised(payload) => Ok(sandbox::extract_script(payload)?.with_origin(outcome.role, outcome.call_index)),
        Decision::Approved | Decision::Halt(_) => {
            Ok(sandbox::extract_script(&generation.output)?.with_origin(generation.role, generation.call_index))
        }
    }
}

/// Shape of the payload a reflector revises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplyFormat {
    /// Research idea with eight labeled sections.
    Idea,
    /// Script in a fenced code block. `may_halt` allows the stop flag.
    Script { may_halt: bool },
    /// Manuscript section with a mandatory highlight box.
    Section,
}

impl ReplyFormat {
    pub fn for_role(role: AgentRole) -> Option<Self> {
        match role {
            AgentRole::Scientist2 => Some(Self::Idea),
            AgentRole::Coder2 | AgentRole::PlotDesigner2 => Some(Self::Script { may_halt: false }),
            AgentRole::Refiner2 => Some(Self::Script { may_halt: true }),
            r if r.kind() == AgentKind::Reflector && r.section().is_some() => Some(Self::Section),
            _ => None,
        }
    }
}

/// Runs `role`'s reflection over `partner`, the generator's call.
pub fn run_reflection(
    ctx: AgentContext<'_>,
    role: AgentRole,
    partner: &Generation,
    bindings: &Bindings,
) -> Result<ReflectionOutcome, AgentError> {
    reflect(ctx, role, PromptKind::Main, partner, bindings)
}

/// Hands a failed script back to the reflector through its repair prompt.
pub fn run_repair(
    ctx: AgentContext<'_>,
    role: AgentRole,
    partner: &Generation,
    bindings: &Bindings,
) -> Result<ReflectionOutcome, AgentError> {
    reflect(ctx, role, PromptKind::Repair, partner, bindings)
}

fn reflect(
    ctx: AgentContext<'_>,
    role: AgentRole,
    which: PromptKind,
    partner: &Generation,
    bindings: &Bindings,
) -> Result<ReflectionOutcome, AgentError> {
    if role.kind() != AgentKind::Reflector || partner.role.partner() != Some(role) {
        return Err(AgentError::Protocol(format!("{role} cannot reflect on {}", partner.role)));
    }
    let call = invoke(ctx, role, which, bindings, &partner.transcript, Vec::new())?;
    let format = ReplyFormat::for_role(role).expect("every reflector has a format");
    let (decision, highlight_box) = classify(role, format, &partner.output, &call.output)?;
    Ok(ReflectionOutcome {
        decision,
        transcript: call.transcript,
        highlight_box,
        reply: call.output,
        role,
        call_index: call.call_index,
    })
}

fn has_marker_line(text: &str, marker: &str) -> bool {
    text.lines().any(|l| l.trim() == marker)
}

fn without_marker_lines(text: &str, marker: &str) -> String {
    text.lines().filter(|l| l.trim() != marker).collect::<Vec<_>>().join("\n").trim().to_string()
}

/// Splits a highlight box off `reply`, returning (box body, remainder).
pub fn split_highlight_box(reply: &str) -> Option<(String, String)> {
    let start = reply.find(HIGHLIGHT_BEGIN)?;
    let inner_start = start + HIGHLIGHT_BEGIN.len();
    let inner_len = reply[inner_start..].find(HIGHLIGHT_END)?;
    let inner = reply[inner_start..inner_start + inner_len].trim().to_string();
    let rest = format!("{}{}", &reply[..start], &reply[inner_start + inner_len + HIGHLIGHT_END.len()..]);
    (!inner.is_empty()).then(|| (inner, rest.trim().to_string()))
}

/// Classifies a reflector reply. Rules, first match wins:
///
/// - script format: the stop flag anywhere (refinement reflector only) halts;
///   a reply byte-equal to the partner output approves; a fenced code block
///   revises; an `APPROVED` line approves.
/// - idea format: byte-equal approves; all eight idea headers revise; an
///   `APPROVED` line approves; some but not all headers is a missing field.
/// - section format: a highlight box is mandatory; with the box removed, a
///   remainder equal to the partner output or consisting of an `APPROVED`
///   line approves, any other non-empty remainder revises.
///
/// Anything else is unparseable.
pub fn classify(
    role: AgentRole,
    format: ReplyFormat,
    partner_output: &str,
    reply: &str,
) -> Result<(Decision, Option<String>), AgentError> {
    let unparseable = || AgentError::UnparseableReflection {
        role,
        excerpt: reply.chars().take(200).collect(),
    };
    match format {
        ReplyFormat::Script { may_halt } => {
            if may_halt && reply.contains(NO_FOLLOWUP) {
                return Ok((Decision::Halt(NO_FOLLOWUP.to_string()), None));
            }
            if reply == partner_output {
                return Ok((Decision::Approved, None));
            }
            if let Ok(script) = sandbox::extract_script(reply) {
                return Ok((Decision::Revised(script.fenced()), None));
            }
            if has_marker_line(reply, APPROVED) {
                return Ok((Decision::Approved, None));
            }
            Err(unparseable())
        }
        ReplyFormat::Idea => {
            if reply == partner_output {
                return Ok((Decision::Approved, None));
            }
            let headers = idea::header_count(reply);
            if headers == crate::model::ResearchIdea::FIELDS.len() {
                parse_idea(reply)?;
                return Ok((Decision::Revised(reply.to_string()), None));
            }
            if has_marker_line(reply, APPROVED) {
                return Ok((Decision::Approved, None));
            }
            if headers > 0 {
                parse_idea(reply)?;
            }
            Err(unparseable())
        }
        ReplyFormat::Section => {
            let (highlight, rest) = split_highlight_box(reply).ok_or(AgentError::MissingHighlightBox(role))?;
            if rest == partner_output.trim() {
                return Ok((Decision::Approved, Some(highlight)));
            }
            let body = without_marker_lines(&rest, APPROVED);
            if body.is_empty() && has_marker_line(&rest, APPROVED) {
                return Ok((Decision::Approved, Some(highlight)));
            }
            if !body.is_empty() {
                return Ok((Decision::Revised(body), Some(highlight)));
            }
            Err(unparseable())
        }
    }
}
