//! Machine-readable tool contracts.
//!
//! The registry is rendered into the ideation and coder prompts as a
//! dictionary keyed by tool name, and checked afterwards against the tool-call
//! log each script leaves behind.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("tool name `{0}` is not a valid identifier")]
    InvalidName(String),
    #[error("tool `{0}` declares no outputs")]
    NoOutputs(String),
    #[error("tool `{0}` is registered twice")]
    DuplicateTool(String),
    #[error("tool registry is empty")]
    Empty,
}

/// One input or output slot of a tool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolParam {
    pub name: String,
    /// Semantic type, e.g. `sequence` or `pdb_path`.
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub format: String,
}

impl ToolParam {
    pub fn new(name: &str, kind: &str, format: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: kind.to_string(),
            format: format.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub inputs: Vec<ToolParam>,
    pub outputs: Vec<ToolParam>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ToolDescriptor {
    pub fn validate(&self) -> Result<(), RegistryError> {
        if self.name.is_empty() || self.name.chars().any(char::is_whitespace) {
            return Err(RegistryError::InvalidName(self.name.clone()));
        }
        if self.outputs.is_empty() {
            return Err(RegistryError::NoOutputs(self.name.clone()));
        }
        Ok(())
    }
}

/// Ordered, name-unique list of tools.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ToolDescriptor>", into = "Vec<ToolDescriptor>")]
pub struct ToolRegistry {
    tools: Vec<ToolDescriptor>,
}

impl ToolRegistry {
    pub fn new(tools: Vec<ToolDescriptor>) -> Result<Self, RegistryError> {
        let mut seen = std::collections::HashSet::new();
        for tool in &tools {
            tool.validate()?;
            if !seen.insert(tool.name.as_str()) {
                return Err(RegistryError::DuplicateTool(tool.name.clone()));
            }
        }
        Ok(Self { tools })
    }

    pub fn tools(&self) -> &[ToolDescriptor] {
        &self.tools
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.iter().any(|t| t.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.iter().map(|t| t.name.as_str())
    }

    /// Dictionary-style description embedded in prompts: a JSON object keyed
    /// by tool name, in registry order.
    pub fn render_prompt_block(&self) -> String {
        let mut dict = serde_json::Map::new();
        for tool in &self.tools {
            let params = |ps: &[ToolParam]| {
                ps.iter()
                    .map(|p| {
                        serde_json::json!({
                            "name": p.name,
                            "type": p.kind,
                            "format": p.format,
                        })
                    })
                    .collect::<Vec<_>>()
            };
            let mut entry = serde_json::Map::new();
            entry.insert("description".into(), tool.description.clone().into());
            entry.insert("inputs".into(), params(&tool.inputs).into());
            entry.insert("outputs".into(), params(&tool.outputs).into());
            if !tool.notes.is_empty() {
                entry.insert("notes".into(), tool.notes.clone().into());
            }
            dict.insert(tool.name.clone(), entry.into());
        }
        serde_json::to_string_pretty(&serde_json::Value::Object(dict)).unwrap_or_default()
    }
}

impl TryFrom<Vec<ToolDescriptor>> for ToolRegistry {
    type Error = RegistryError;

    fn try_from(tools: Vec<ToolDescriptor>) -> Result<Self, Self::Error> {
        Self::new(tools)
    }
}

impl From<ToolRegistry> for Vec<ToolDescriptor> {
    fn from(registry: ToolRegistry) -> Self {
        registry.tools
    }
}
