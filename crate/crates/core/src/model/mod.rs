//! Domain types shared by every stage of a run.
//!
//! Also hosts the run configuration ([`config`]), the stage machine
//! ([`state`]), the tool registry ([`tools`]) and the canonical run directory
//! layout ([`store`]).

pub mod config;
pub mod state;
pub mod store;
pub mod tools;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ConfigError, ModelBinding, ReasoningEffort, RunConfig};
pub use state::{IllegalTransition, RunState, Stage, StageEvent};
pub use store::{RunHandle, RunLayout, StoreError};
pub use tools::{ToolDescriptor, ToolParam, ToolRegistry};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("research query text is empty")]
    EmptyQuery,
    #[error("idea field `{0}` is empty")]
    EmptyIdeaField(&'static str),
}

/// The user's research goal, experiment constraints and follow-up budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResearchQuery {
    pub text: String,
    #[serde(default)]
    pub constraints: Vec<String>,
    /// Maximum number of follow-up rounds after the initial test. When absent
    /// the configuration's value applies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_test: Option<u32>,
}

impl ResearchQuery {
    pub fn new(text: impl Into<String>, constraints: Vec<String>, n_test: u32) -> Result<Self, DomainError> {
        let query = Self {
            text: text.into(),
            constraints,
            n_test: Some(n_test),
        };
        query.validate()?;
        Ok(query)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.text.trim().is_empty() {
            return Err(DomainError::EmptyQuery);
        }
        Ok(())
    }

    /// Constraints as a bulleted block for prompt rendering.
    pub fn constraints_block(&self) -> String {
        if self.constraints.is_empty() {
            return "- (none)".to_string();
        }
        self.constraints
            .iter()
            .map(|c| format!("- {}", c.trim()))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Structured research proposal produced by the ideation pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResearchIdea {
    pub idea: String,
    pub hypothesis: String,
    pub mechanism: String,
    pub outcome: String,
    pub approach: String,
    pub feasibility: String,
    pub novelty: String,
    pub challenge: String,
}

impl ResearchIdea {
    /// Field names in canonical order.
    pub const FIELDS: [&'static str; 8] = [
        "idea",
        "hypothesis",
        "mechanism",
        "outcome",
        "approach",
        "feasibility",
        "novelty",
        "challenge",
    ];

    pub fn field(&self, name: &str) -> Option<&str> {
        Some(match name {
            "idea" => &self.idea,
            "hypothesis" => &self.hypothesis,
            "mechanism" => &self.mechanism,
            "outcome" => &self.outcome,
            "approach" => &self.approach,
            "feasibility" => &self.feasibility,
            "novelty" => &self.novelty,
            "challenge" => &self.challenge,
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        for name in Self::FIELDS {
            if self.field(name).is_none_or(|v| v.trim().is_empty()) {
                return Err(DomainError::EmptyIdeaField(name));
            }
        }
        Ok(())
    }

    /// Renders the idea in the labeled-section form accepted by
    /// [`crate::agent::parse_idea`].
    pub fn to_labeled_text(&self) -> String {
        let mut out = String::new();
        for name in Self::FIELDS {
            let mut title = name.to_string();
            title[..1].make_ascii_uppercase();
            out.push_str("## ");
            out.push_str(&title);
            out.push('\n');
            out.push_str(self.field(name).unwrap_or_default().trim());
            out.push_str("\n\n");
        }
        out.truncate(out.trim_end().len());
        out.push('\n');
        out
    }
}

/// The five manuscript sections, in document order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SectionKind {
    Introduction,
    Methods,
    Results,
    Conclusion,
    Outlook,
}

impl SectionKind {
    pub const ALL: [SectionKind; 5] = [
        SectionKind::Introduction,
        SectionKind::Methods,
        SectionKind::Results,
        SectionKind::Conclusion,
        SectionKind::Outlook,
    ];

    pub fn title(self) -> &'static str {
        match self {
            SectionKind::Introduction => "Introduction",
            SectionKind::Methods => "Methods",
            SectionKind::Results => "Results",
            SectionKind::Conclusion => "Conclusion",
            SectionKind::Outlook => "Outlook",
        }
    }

    /// Stem of the section's `.tex` file inside `report/`.
    pub fn file_stem(self) -> &'static str {
        match self {
            SectionKind::Introduction => "introduction",
            SectionKind::Methods => "methods",
            SectionKind::Results => "results",
            SectionKind::Conclusion => "conclusion",
            SectionKind::Outlook => "outlook",
        }
    }

    /// (writer, reflector) roles for this section.
    pub fn roles(self) -> (AgentRole, AgentRole) {
        use AgentRole::*;
        match self {
            SectionKind::Introduction => (IntroductionWriter1, IntroductionWriter2),
            SectionKind::Methods => (MethodsWriter1, MethodsWriter2),
            SectionKind::Results => (ResultsWriter1, ResultsWriter2),
            SectionKind::Conclusion => (ConclusionWriter1, ConclusionWriter2),
            SectionKind::Outlook => (OutlookWriter1, OutlookWriter2),
        }
    }
}

impl fmt::Display for SectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

/// Every agent role the pipeline calls. Serialized by its wire name, e.g.
/// `Scientist_1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentRole {
    #[serde(rename = "Scientist_1")]
    Scientist1,
    #[serde(rename = "Scientist_2")]
    Scientist2,
    #[serde(rename = "Coder_1")]
    Coder1,
    #[serde(rename = "Coder_2")]
    Coder2,
    #[serde(rename = "Refiner_1")]
    Refiner1,
    #[serde(rename = "Refiner_2")]
    Refiner2,
    #[serde(rename = "Plot_Designer_1")]
    PlotDesigner1,
    #[serde(rename = "Plot_Designer_2")]
    PlotDesigner2,
    #[serde(rename = "Plot_Analyzer")]
    PlotAnalyzer,
    #[serde(rename = "Introduction_Writer_1")]
    IntroductionWriter1,
    #[serde(rename = "Introduction_Writer_2")]
    IntroductionWriter2,
    #[serde(rename = "Methods_Writer_1")]
    MethodsWriter1,
    #[serde(rename = "Methods_Writer_2")]
    MethodsWriter2,
    #[serde(rename = "Results_Writer_1")]
    ResultsWriter1,
    #[serde(rename = "Results_Writer_2")]
    ResultsWriter2,
    #[serde(rename = "Conclusion_Writer_1")]
    ConclusionWriter1,
    #[serde(rename = "Conclusion_Writer_2")]
    ConclusionWriter2,
    #[serde(rename = "Outlook_Writer_1")]
    OutlookWriter1,
    #[serde(rename = "Outlook_Writer_2")]
    OutlookWriter2,
}

/// How an agent participates in the generation/reflection protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Generator,
    Reflector,
    /// Called once per input without a reflector (the figure analyzer).
    Standalone,
}

impl AgentRole {
    pub const ALL: [AgentRole; 19] = [
        AgentRole::Scientist1,
        AgentRole::Scientist2,
        AgentRole::Coder1,
        AgentRole::Coder2,
        AgentRole::Refiner1,
        AgentRole::Refiner2,
        AgentRole::PlotDesigner1,
        AgentRole::PlotDesigner2,
        AgentRole::PlotAnalyzer,
        AgentRole::IntroductionWriter1,
        AgentRole::IntroductionWriter2,
        AgentRole::MethodsWriter1,
        AgentRole::MethodsWriter2,
        AgentRole::ResultsWriter1,
        AgentRole::ResultsWriter2,
        AgentRole::ConclusionWriter1,
        AgentRole::ConclusionWriter2,
        AgentRole::OutlookWriter1,
        AgentRole::OutlookWriter2,
    ];

    pub fn as_str(self) -> &'static str {
        use AgentRole::*;
        match self {
            Scientist1 => "Scientist_1",
            Scientist2 => "Scientist_2",
            Coder1 => "Coder_1",
            Coder2 => "Coder_2",
            Refiner1 => "Refiner_1",
            Refiner2 => "Refiner_2",
            PlotDesigner1 => "Plot_Designer_1",
            PlotDesigner2 => "Plot_Designer_2",
            PlotAnalyzer => "Plot_Analyzer",
            IntroductionWriter1 => "Introduction_Writer_1",
            IntroductionWriter2 => "Introduction_Writer_2",
            MethodsWriter1 => "Methods_Writer_1",
            MethodsWriter2 => "Methods_Writer_2",
            ResultsWriter1 => "Results_Writer_1",
            ResultsWriter2 => "Results_Writer_2",
            ConclusionWriter1 => "Conclusion_Writer_1",
            ConclusionWriter2 => "Conclusion_Writer_2",
            OutlookWriter1 => "Outlook_Writer_1",
            OutlookWriter2 => "Outlook_Writer_2",
        }
    }

    pub fn kind(self) -> AgentKind {
        if self == AgentRole::PlotAnalyzer {
            AgentKind::Standalone
        } else if self.as_str().ends_with("_2") {
            AgentKind::Reflector
        } else {
            AgentKind::Generator
        }
    }

    /// The other half of a generation/reflection pair.
    pub fn partner(self) -> Option<AgentRole> {
        let name = self.as_str();
        let partner = match name.strip_suffix("_1") {
            Some(stem) => format!("{stem}_2"),
            None => format!("{}_1", name.strip_suffix("_2")?),
        };
        partner.parse().ok()
    }

    /// Section written (or reviewed) by this role, if it is a writer.
    pub fn section(self) -> Option<SectionKind> {
        SectionKind::ALL.into_iter().find(|k| {
            let (w, r) = k.roles();
            w == self || r == self
        })
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown agent role `{0}`")]
pub struct UnknownRole(pub String);

impl FromStr for AgentRole {
    type Err = UnknownRole;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| UnknownRole(s.to_string()))
    }
}

/// The per-round bundle left behind by one script execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundArtifacts {
    pub round_index: u32,
    pub script_path: PathBuf,
    pub results_path: PathBuf,
    pub final_results_path: PathBuf,
    pub notes_path: PathBuf,
    pub stdout_log: PathBuf,
    pub stderr_log: PathBuf,
    pub exit_status: i32,
    /// Seconds.
    pub wall_time: f64,
}

impl RoundArtifacts {
    pub fn succeeded(&self) -> bool {
        self.exit_status == 0
    }
}
