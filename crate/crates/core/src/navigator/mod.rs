//! The slow loop: turns a natural-language policy plus a state snapshot into
//! guarded control parameters.

mod action;
mod cycle;
mod guardrail;
mod prompt;
mod summary;

pub use action::{extract_json_object, parse_action, ControlAction, ParseError};
pub use cycle::{CycleOutcome, FlightGuard, GuardrailFlags, Navigator, NavigatorLogEntry};
pub use guardrail::{
    apply_ema, clamp_budget, sanitize_weights, DimensionMismatch, GuardrailConfig, SanitizedWeights,
};
pub use prompt::{compose_prompt, DEFAULT_SYSTEM_PROMPT, PROMPT_BLOCKS};
pub use summary::{StateSummary, SummaryParseError, SummaryRow, COLUMN_HEADER};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A declarative statement of operator intent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
}

impl Policy {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::invalid("policy", "policy text is empty"));
        }
        Ok(Self { text, id: None })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn id(&self) -> Option<&str> {
        self.id.as_deref()
    }

    /// Preset policies by label (`P1`..`P4`, `EQ`).
    pub fn preset(id: &str) -> Option<Self> {
        let text = match id {
            "P1" => "Maximize total throughput",
            "P2" => "Prioritize channels 7 and 8",
            "P3" => "Minimize total power while keeping sum rate above 10 bits",
            "P4" => "Shut down the 3 weakest channels and focus power on the rest",
            "EQ" => EQUALIZE_POLICY,
            _ => return None,
        };
        Some(Self {
            text: text.into(),
            id: Some(id.into()),
        })
    }
}

pub const EQUALIZE_POLICY: &str = "Equalize MI across all channels";
