//! Append-only check between the `results.json` documents of consecutive
//! rounds.

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Key name used in violations that concern the document as a whole.
pub const ROOT_KEY: &str = "(root)";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub violations: Vec<String>,
}

impl ContinuityReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn same_type(a: &Value, b: &Value) -> bool {
    std::mem::discriminant(a) == std::mem::discriminant(b)
}

fn check_value(key: &str, prev: &Value, next: &Value, out: &mut Vec<String>) {
    match (prev, next) {
        (Value::Array(p), Value::Array(n)) => {
            if !n.starts_with(p) {
                out.push(format!("{key}: not a prefix"));
            }
        }
        (p, n) if !same_type(p, n) => out.push(format!("{key}: type changed")),
        _ => {}
    }
}

/// Checks that `next` only appends to `prev`: every top-level key of `prev`
/// survives, list values keep `prev`'s list as a prefix, and no value
/// changes JSON type. Scalars and nested objects may otherwise change.
pub fn check_continuity(prev: &Value, next: &Value) -> ContinuityReport {
    let mut violations = Vec::new();
    match (prev, next) {
        (Value::Object(p), Value::Object(n)) => {
            for (key, value) in p {
                match n.get(key) {
                    None => violations.push(format!("{key}: dropped")),
                    Some(next_value) => check_value(key, value, next_value, &mut violations),
                }
            }
        }
        _ => check_value(ROOT_KEY, prev, next, &mut violations),
    }
    ContinuityReport { violations }
}
