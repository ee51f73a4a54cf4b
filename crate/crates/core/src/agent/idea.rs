//! Parsing the eight-section research idea out of free text.
//!
//! A header line names one field, case-insensitively, in any of these forms:
//! `Idea: text`, `## Idea`, `**Idea:** text`, `**Idea**: text`, `**Idea**`.
//! The field body runs until the next header. Text before the first header is
//! ignored.

use super::AgentError;
use crate::model::ResearchIdea;

/// If `line` is a header for one of `fields`, returns the field and any
/// inline body text.
pub(crate) fn labeled_header<'f, 'l>(line: &'l str, fields: &[&'f str]) -> Option<(&'f str, &'l str)> {
    let mut rest = line.trim();
    let heading = rest.starts_with('#');
    rest = rest.trim_start_matches('#').trim_start();
    let bold = rest.starts_with("**");
    if bold {
        rest = &rest[2..];
    }
    let field = fields.iter().copied().find(|f| {
        rest.get(..f.len()).is_some_and(|p| p.eq_ignore_ascii_case(f))
            && !rest[f.len()..].starts_with(|c: char| c.is_alphanumeric() || c == '_')
    })?;
    rest = &rest[field.len()..];
    let mut closed = false;
    if bold && rest.starts_with("**") {
        rest = &rest[2..];
        closed = true;
    }
    let colon = rest.starts_with(':');
    if colon {
        rest = &rest[1..];
        if bold && !closed && rest.starts_with("**") {
            rest = &rest[2..];
            closed = true;
        }
    }
    if bold && !closed {
        return None;
    }
    let inline = rest.trim();
    if heading || colon || (bold && inline.is_empty()) {
        Some((field, inline))
    } else {
        None
    }
}

pub(crate) fn header(line: &str) -> Option<(&'static str, &str)> {
    labeled_header(line, &ResearchIdea::FIELDS)
}

/// Number of distinct idea fields with a header in `text`.
pub(crate) fn header_count(text: &str) -> usize {
    let mut seen: Vec<&str> = text.lines().filter_map(header).map(|(f, _)| f).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Splits `text` into the bodies of `fields`, in the order given. Every field
/// must appear exactly once with a non-empty body.
pub fn parse_labeled(text: &str, fields: &[&str]) -> Result<Vec<String>, AgentError> {
    let mut bodies: Vec<Option<String>> = vec![None; fields.len()];
    let mut current: Option<usize> = None;
    for line in text.lines() {
        if let Some((field, inline)) = labeled_header(line, fields) {
            let slot = fields.iter().position(|f| *f == field).expect("known field");
            if bodies[slot].is_some() {
                return Err(AgentError::DuplicateField(field.to_string()));
            }
            bodies[slot] = Some(inline.to_string());
            current = Some(slot);
        } else if let Some(slot) = current {
            let body = bodies[slot].as_mut().expect("open field");
            body.push('\n');
            body.push_str(line);
        }
    }
    bodies
        .into_iter()
        .zip(fields)
        .map(|(body, field)| match body.map(|b| b.trim().to_string()) {
            Some(b) if !b.is_empty() => Ok(b),
            _ => Err(AgentError::MissingField(field.to_string())),
        })
        .collect()
}

pub fn parse_idea(text: &str) -> Result<ResearchIdea, AgentError> {
    let mut f = parse_labeled(text, &ResearchIdea::FIELDS)?.into_iter();
    let mut next = || f.next().expect("eight fields");
    Ok(ResearchIdea {
        idea: next(),
        hypothesis: next(),
        mechanism: next(),
        outcome: next(),
        approach: next(),
        feasibility: next(),
        novelty: next(),
        challenge: next(),
    })
}
