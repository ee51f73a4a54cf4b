//! Contract with the `functions.py` tool module that generated scripts import.
//!
//! The module itself is a separate component. The engine's side of the
//! contract is:
//!
//! - the sandbox puts the directory holding `functions.py` on the
//!   interpreter's module path (`PYTHONPATH`);
//! - the run seed and round index reach the tools through the
//!   [`SEED_ENV`] and [`ROUND_ENV`] environment variables;
//! - every tool invocation is appended to `tool_calls.jsonl` in the working
//!   directory, one JSON object per line, and the engine checks the logged
//!   names against the registry that was rendered into the prompts.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ToolDescriptor, ToolParam, ToolRegistry};

pub const FUNCTIONS_MODULE: &str = "functions.py";
pub const TOOL_LOG_FILE: &str = "tool_calls.jsonl";
pub const SEED_ENV: &str = "AUTOLAB_SEED";
pub const ROUND_ENV: &str = "AUTOLAB_ROUND";

#[derive(Debug, Error)]
pub enum ToolLogError {
    #[error("{file} line {line}: {message}")]
    Malformed { file: String, line: usize, message: String },
    #[error("tool call sequence numbers not strictly increasing at line {0}")]
    NonMonotonicSequence(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallLogEntry {
    pub seq: u64,
    pub tool: String,
    #[serde(default)]
    pub args: serde_json::Value,
    #[serde(default)]
    pub timestamp: String,
}

/// Reads the tool-call log left in `dir`. A missing log means the script
/// called no tools.
pub fn read_tool_call_log(dir: &Path) -> Result<Vec<ToolCallLogEntry>, ToolLogError> {
    let path = dir.join(TOOL_LOG_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut entries: Vec<ToolCallLogEntry> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let entry: ToolCallLogEntry = serde_json::from_str(line).map_err(|e| ToolLogError::Malformed {
            file: TOOL_LOG_FILE.into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if entries.last().is_some_and(|prev| prev.seq >= entry.seq) {
            return Err(ToolLogError::NonMonotonicSequence(i + 1));
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Names in the log that the registry does not contain, in first-seen order.
pub fn unregistered_tools(entries: &[ToolCallLogEntry], registry: &ToolRegistry) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for entry in entries {
        if !registry.contains(&entry.tool) && !out.contains(&entry.tool) {
            out.push(entry.tool.clone());
        }
    }
    out
}

/// Registry describing the stub protein toolkit.
pub fn builtin_registry() -> ToolRegistry {
    let p = ToolParam::new;
    let tools = vec![
        ToolDescriptor {
            name: "analyze_protein_structure".into(),
            description: "Computes 8-class secondary structure for unrelaxed proteins.".into(),
            inputs: vec![p("pdb_path", "path", "Protein PDB file")],
            outputs: vec![p(
                "secondary_structure",
                "dict[str, str]",
                "Percent content per class, e.g. {\"H\": \"30\", \"B\": \"0\", \"E\": \"10\", \"G\": \"0\", \"I\": \"0\", \"T\": \"0\", \"S\": \"5\", \"P\": \"0\", \"-\": \"55\"}",
            )],
            notes: vec!["Used for unrelaxed structure analysis".into()],
        },
        ToolDescriptor {
            name: "fold_protein".into(),
            description: "Folds a protein from an amino acid sequence.".into(),
            inputs: vec![p("sequence", "str", "Amino acid sequence")],
            outputs: vec![p("pdb_path", "path", "Folded 3D protein structure as a PDB file")],
            notes: vec![],
        },
        ToolDescriptor {
            name: "design_protein_from_length".into(),
            description: "Creates random protein sequences of a given length without structural constraints.".into(),
            inputs: vec![p("length", "int", "Sequence length")],
            outputs: vec![p("sequence", "str", "Amino acid sequence")],
            notes: vec!["No prioritization of secondary structure".into()],
        },
        ToolDescriptor {
            name: "design_protein_from_CATH".into(),
            description: "Generates proteins using CATH class: 1 = alpha, 2 = beta, 3 = mixed.".into(),
            inputs: vec![
                p("length", "int", "Sequence length"),
                p("cath_class", "int", "CATH class"),
                p("n_samples", "int", "Number of samples"),
            ],
            outputs: vec![p("sequences", "list[str]", "Amino acid sequences")],
            notes: vec!["No control over sequence pattern".into()],
        },
        ToolDescriptor {
            name: "calc_protein_force".into(),
            description: "Predicts the maximum unfolding force and unfolding energy of a protein from its sequence.".into(),
            inputs: vec![p("sequence", "str", "Amino acid sequence")],
            outputs: vec![
                p("f_max", "float", "Maximum unfolding force, normalized model units"),
                p("energy", "float", "Unfolding energy, normalized model units"),
            ],
            notes: vec![],
        },
        ToolDescriptor {
            name: "estimate_stability".into(),
            description: "Estimates structural stability as the maximum backbone root-mean-square deviation.".into(),
            inputs: vec![p("pdb_path", "path", "Protein PDB file")],
            outputs: vec![p("rmsd_max", "float", "Maximum backbone RMSD in angstrom")],
            notes: vec![],
        },
    ];
    ToolRegistry::new(tools).expect("built-in registry is valid")
}
