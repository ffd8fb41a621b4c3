use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// A control action as the model proposed it, before any guardrail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub weights: Vec<f64>,
    #[serde(rename = "P_total", skip_serializing_if = "Option::is_none")]
    pub p_total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ParseError {
    #[error("no JSON object found in response")]
    NoJsonFound,
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("\"weights\" array missing")]
    MissingWeights,
    #[error("non-numeric entry in {0}")]
    NonNumericEntry(String),
}

// Bounds the work spent on inputs that are mostly braces.
const MAX_CANDIDATES: usize = 64;

/// Finds the end (exclusive) of the balanced object starting at `start`,
/// honoring JSON string literals and escapes.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Returns the first balanced `{...}` in `raw` that parses as a JSON object,
/// skipping surrounding prose and code fences.
pub fn extract_json_object(raw: &str) -> Result<Map<String, Value>, ParseError> {
    let bytes = raw.as_bytes();
    let mut last_err = None;
    let mut pos = 0;
    for _ in 0..MAX_CANDIDATES {
        let Some(offset) = raw[pos..].find('{') else { break };
        let start = pos + offset;
        match balanced_end(bytes, start) {
            Some(end) => match serde_json::from_str::<Value>(&raw[start..end]) {
                Ok(Value::Object(map)) => return Ok(map),
                Ok(_) => unreachable!("a braced value is an object"),
                Err(e) => {
                    last_err = Some(ParseError::MalformedJson(e.to_string()));
                    pos = start + 1;
                }
            },
            None => {
                last_err.get_or_insert_with(|| ParseError::MalformedJson("unterminated object".into()));
                pos = start + 1;
            }
        }
    }
    Err(last_err.unwrap_or(ParseError::NoJsonFound))
}

/// Parses a model response into a [`ControlAction`].
///
/// `weights` is required and must be an array of JSON numbers (numeric
/// strings are rejected). `P_total` is optional (`null` counts as absent),
/// `reasoning` is optional and kept verbatim.
pub fn parse_action(raw: &str) -> Result<ControlAction, ParseError> {
    let obj = extract_json_object(raw)?;
    let weights = match obj.get("weights") {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| ParseError::NonNumericEntry("weights".into())))
            .collect::<Result<Vec<_>, _>>()?,
        _ => return Err(ParseError::MissingWeights),
    };
    let p_total = match obj.get("P_total") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_f64().ok_or_else(|| ParseError::NonNumericEntry("P_total".into()))?),
    };
    let reasoning = match obj.get("reasoning") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => Some(other.to_string()),
    };
    Ok(ControlAction {
        weights,
        p_total,
        reasoning,
    })
}
