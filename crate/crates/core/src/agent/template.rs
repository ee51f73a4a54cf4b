//! Prompt templates and the per-role prompt set.
//!
//! Placeholders are `{name}` with `name` an ASCII identifier; `{{` and `}}`
//! produce literal braces. Every placeholder in a template is required.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::AgentError;
use crate::model::AgentRole;
use crate::util;

/// Placeholder names a prompt file may use.
pub const PLACEHOLDERS: &[&str] = &[
    "query",
    "constraints",
    "tools",
    "idea",
    "code",
    "results",
    "final_results",
    "notes",
    "stderr",
    "round",
    "n_test",
    "rounds",
    "figure",
    "analyses",
    "fit_params",
];

pub type Bindings = BTreeMap<&'static str, String>;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    body: String,
    pieces: Vec<Piece>,
    required: BTreeSet<String>,
}

impl PromptTemplate {
    /// Parses `body`. An unmatched brace is a syntax error.
    pub fn parse(body: &str) -> Result<Self, AgentError> {
        let syntax = |at: usize, why: &str| AgentError::TemplateSyntax(format!("offset {at}: {why}"));
        let mut pieces = Vec::new();
        let mut text = String::new();
        let mut required = BTreeSet::new();
        let mut chars = body.char_indices().peekable();
        while let Some((at, c)) = chars.next() {
            match c {
                '{' if chars.peek().map(|p| p.1) == Some('{') => {
                    chars.next();
                    text.push('{');
                }
                '}' if chars.peek().map(|p| p.1) == Some('}') => {
                    chars.next();
                    text.push('}');
                }
                '{' => {
                    let mut name = String::new();
                    loop {
                        match chars.next() {
                            Some((_, '}')) => break,
                            Some((_, ch)) if ch.is_ascii_alphanumeric() || ch == '_' => name.push(ch),
                            _ => return Err(syntax(at, "unterminated or malformed placeholder")),
                        }
                    }
                    if name.is_empty() || name.starts_with(|ch: char| ch.is_ascii_digit()) {
                        return Err(syntax(at, "placeholder name must be an identifier"));
                    }
                    if !text.is_empty() {
                        pieces.push(Piece::Text(std::mem::take(&mut text)));
                    }
                    required.insert(name.clone());
                    pieces.push(Piece::Slot(name));
                }
                '}' => return Err(syntax(at, "unmatched `}`")),
                other => text.push(other),
            }
        }
        if !text.is_empty() {
            pieces.push(Piece::Text(text));
        }
        Ok(Self {
            body: body.to_string(),
            pieces,
            required,
        })
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn required(&self) -> &BTreeSet<String> {
        &self.required
    }

    /// Substitutes every placeholder. Extra bindings are ignored.
    pub fn render(&self, bindings: &Bindings) -> Result<String, AgentError> {
        let mut out = String::with_capacity(self.body.len());
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => {
                    let value = bindings
                        .get(name.as_str())
                        .ok_or_else(|| AgentError::UnboundPlaceholder(name.clone()))?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

/// Templates for one role.
#[derive(Debug, Clone)]
pub struct RolePrompt {
    pub version: u32,
    pub system: PromptTemplate,
    pub prompt: PromptTemplate,
    /// Used when a failed script is handed back to the reflector.
    pub repair: Option<PromptTemplate>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RolePromptFile {
    version: u32,
    system: String,
    prompt: String,
    repair: Option<String>,
}

/// The complete prompt set, one entry per role.
#[derive(Debug, Clone)]
pub struct PromptSet {
    roles: HashMap<AgentRole, RolePrompt>,
    hash: String,
}

macro_rules! builtin_prompts {
    ($($role:literal),* $(,)?) => {
        &[$(($role, include_str!(concat!("../../../../prompts/", $role, ".toml")))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin_prompts!(
    "Scientist_1",
    "Scientist_2",
    "Coder_1",
    "Coder_2",
    "Refiner_1",
    "Refiner_2",
    "Plot_Designer_1",
    "Plot_Designer_2",
    "Plot_Analyzer",
    "Introduction_Writer_1",
    "Introduction_Writer_2",
    "Methods_Writer_1",
    "Methods_Writer_2",
    "Results_Writer_1",
    "Results_Writer_2",
    "Conclusion_Writer_1",
    "Conclusion_Writer_2",
    "Outlook_Writer_1",
    "Outlook_Writer_2",
);

impl PromptSet {
    /// The prompt files shipped in the repository's `prompts/` directory.
    pub fn builtin() -> Self {
        let files = BUILTIN.iter().map(|(r, t)| (r.to_string(), t.to_string()));
        Self::from_files(files).expect("shipped prompt files are valid")
    }

    /// Loads `<role>.toml` for every role from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, AgentError> {
        let mut files = Vec::new();
        for role in AgentRole::ALL {
            let path = dir.join(format!("{role}.toml"));
            let text = fs::read_to_string(&path).map_err(|e| AgentError::PromptLoad {
                file: path.display().to_string(),
                message: e.to_string(),
            })?;
            files.push((role.as_str().to_string(), text));
        }
        Self::from_files(files)
    }

    fn from_files(files: impl IntoIterator<Item = (String, String)>) -> Result<Self, AgentError> {
        let mut roles = HashMap::new();
        let mut texts = BTreeMap::new();
        for (name, text) in files {
            let role: AgentRole = name.parse().map_err(|_| AgentError::PromptLoad {
                file: format!("{name}.toml"),
                message: "not an agent role".into(),
            })?;
            let load_err = |message: String| AgentError::PromptLoad {
                file: format!("{name}.toml"),
                message,
            };
            let raw: RolePromptFile = toml::from_str(&text).map_err(|e| load_err(e.to_string()))?;
            let parse = |body: &str| -> Result<PromptTemplate, AgentError> {
                let t = PromptTemplate::parse(body).map_err(|e| load_err(e.to_string()))?;
                if let Some(bad) = t.required().iter().find(|p| !PLACEHOLDERS.contains(&p.as_str())) {
                    return Err(load_err(format!("unknown placeholder {{{bad}}}")));
                }
                Ok(t)
            };
            let prompt = RolePrompt {
                version: raw.version,
                system: parse(&raw.system)?,
                prompt: parse(&raw.prompt)?,
                repair: raw.repair.as_deref().map(parse).transpose()?,
            };
            roles.insert(role, prompt);
            texts.insert(role.as_str(), text);
        }
        if let Some(missing) = AgentRole::ALL.iter().find(|r| !roles.contains_key(r)) {
            return Err(AgentError::MissingPrompt(*missing));
        }
        let mut digest_input = Vec::new();
        for (name, text) in &texts {
            digest_input.extend_from_slice(name.as_bytes());
            digest_input.push(0);
            digest_input.extend_from_slice(text.as_bytes());
            digest_input.push(0);
        }
        Ok(Self {
            roles,
            hash: util::sha256_hex(&digest_input),
        })
    }

    pub fn get(&self, role: AgentRole) -> &RolePrompt {
        &self.roles[&role]
    }

    /// SHA-256 over every prompt file, recorded in the run config.
    pub fn hash(&self) -> &str {
        &self.hash
    }
}
