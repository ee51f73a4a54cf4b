//! Autonomous hypothesis-discovery workflow engine.
//!
//! A run moves through four stages: ideation, initial testing, a bounded
//! refinement loop, and documentation. Every model call goes through a
//! generation/reflection pair: the generator answers with an empty history and
//! its reflector receives the generator's full transcript as history.
//!
//! Module map:
//!
//! - [`model`]: domain types, run configuration, the stage machine and the
//!   on-disk run layout.
//! - [`gateway`]: chat-completion backends (live HTTP and scripted fixtures)
//!   plus transcript persistence.
//! - [`agent`]: prompt templates, the generation/reflection protocol and
//!   structured-output parsing.
//! - [`sandbox`]: script extraction, child-process execution and artifact
//!   collection.
//! - [`pipeline`]: stage orchestration, the refinement loop and continuity
//!   checks.
//! - [`report`]: plots, figure analysis, section writers and LaTeX assembly.
//! - [`toolkit`]: the contract shared with the `functions.py` tool module.

pub mod agent;
pub mod gateway;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod sandbox;
pub mod toolkit;

mod util;

pub use agent::{AgentError, PromptSet, PromptTemplate};
pub use gateway::{Backend, ChatMessage, ChatRequest, ChatResponse, GatewayError, LiveBackend, ScriptedBackend};
pub use model::{
    AgentRole, ResearchIdea, ResearchQuery, RoundArtifacts, RunConfig, RunHandle, RunState, SectionKind,
    Stage, StageEvent, ToolDescriptor, ToolRegistry,
};
pub use pipeline::{run_pipeline, PipelineError, RunRecord};
pub use sandbox::{Executor, Sandbox, SandboxError};
