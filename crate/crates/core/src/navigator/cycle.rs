use std::io::Write;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::action::{parse_action, ControlAction};
use super::guardrail::{apply_ema, clamp_budget, sanitize_weights, GuardrailConfig};
use super::prompt::{compose_prompt, DEFAULT_SYSTEM_PROMPT};
use super::summary::StateSummary;
use super::Policy;
use crate::control::ControlCell;
use crate::llm::ChatBackend;
use crate::model::ControlParams;
use crate::optimizer::StepRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleOutcome {
    Applied,
    /// A previous call was still in flight.
    Skipped,
    /// Backend, parse or dimension failure; parameters retained.
    Failed,
}

impl CycleOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            CycleOutcome::Applied => "applied",
            CycleOutcome::Skipped => "skipped",
            CycleOutcome::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardrailFlags {
    /// Negative or NaN weights were clipped to zero.
    pub clipped: bool,
    /// No usable weight survived; uniform weights were used.
    pub uniform_fallback: bool,
    /// The proposed budget was outside `[p_min, p_max]`.
    pub budget_clamped: bool,
    /// The cycle failed and the previous parameters were kept.
    pub retained_previous: bool,
}

/// Audit record for one navigator cycle, written for every cycle including
/// skipped and failed ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavigatorLogEntry {
    pub cycle: u64,
    pub timestamp_ms: u64,
    /// Optimizer step of the snapshot the cycle read.
    pub step: Option<u64>,
    pub outcome: CycleOutcome,
    pub policy: String,
    /// User message sent (the rendered state summary).
    pub prompt: Option<String>,
    pub raw_response: Option<String>,
    pub action: Option<ControlAction>,
    pub error: Option<String>,
    pub flags: GuardrailFlags,
    pub applied: Option<ControlParams>,
    pub reasoning: Option<String>,
}

impl NavigatorLogEntry {
    fn new(cycle: u64, step: Option<u64>, outcome: CycleOutcome, policy: &Policy) -> Self {
        Self {
            cycle,
            timestamp_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            step,
            outcome,
            policy: policy.text().to_string(),
            prompt: None,
            raw_response: None,
            action: None,
            error: None,
            flags: GuardrailFlags::default(),
            applied: None,
            reasoning: None,
        }
    }

    /// Appends the entry as one JSON line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut out, self)?;
        out.write_all(b"\n")
    }
}

/// Held while a backend call is in flight; releases the slot on drop.
#[derive(Debug)]
pub struct FlightGuard {
    flag: Arc<AtomicBool>,
}

impl Drop for FlightGuard {
    fn drop(&mut self) {
        self.flag.store(false, Ordering::Release);
    }
}

/// The slow loop's single cycle: snapshot -> prompt -> backend -> parse ->
/// sanitize -> clamp -> smooth -> write.
pub struct Navigator {
    backend: Box<dyn ChatBackend>,
    guardrails: GuardrailConfig,
    system_prompt: String,
    in_flight: Arc<AtomicBool>,
    cycles: AtomicU64,
}

impl Navigator {
    pub fn new(backend: Box<dyn ChatBackend>, guardrails: GuardrailConfig) -> Self {
        Self {
            backend,
            guardrails,
            system_prompt: DEFAULT_SYSTEM_PROMPT.to_string(),
            in_flight: Arc::new(AtomicBool::new(false)),
            cycles: AtomicU64::new(0),
        }
    }

    pub fn with_system_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.system_prompt = prompt.into();
        self
    }

    pub fn guardrails(&self) -> &GuardrailConfig {
        &self.guardrails
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn system_prompt(&self) -> &str {
        &self.system_prompt
    }

    pub fn is_in_flight(&self) -> bool {
        self.in_flight.load(Ordering::Acquire)
    }

    /// Claims the single in-flight slot, or `None` if a call is pending.
    pub fn try_acquire(&self) -> Option<FlightGuard> {
        self.in_flight
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .ok()
            .map(|_| FlightGuard {
                flag: self.in_flight.clone(),
            })
    }

    fn next_cycle(&self) -> u64 {
        self.cycles.fetch_add(1, Ordering::Relaxed)
    }

    /// Log entry for a trigger that found a call already in flight.
    pub fn skipped(&self, step: Option<u64>, policy: &Policy) -> NavigatorLogEntry {
        let mut e = NavigatorLogEntry::new(self.next_cycle(), step, CycleOutcome::Skipped, policy);
        e.error = Some("previous call still in flight".into());
        e
    }

    /// Log entry for a cycle that died outside the normal failure paths,
    /// such as a panicking backend caught by a supervisor.
    pub fn failed(&self, step: Option<u64>, policy: &Policy, error: impl Into<String>) -> NavigatorLogEntry {
        fail(
            NavigatorLogEntry::new(self.next_cycle(), step, CycleOutcome::Failed, policy),
            error.into(),
        )
    }

    /// Runs one cycle, or records a skip if another call is pending.
    pub fn cycle(&self, snapshot: &StepRecord, policy: &Policy, params: &ControlCell) -> NavigatorLogEntry {
        match self.try_acquire() {
            Some(guard) => self.cycle_acquired(guard, snapshot, policy, params),
            None => self.skipped(Some(snapshot.step), policy),
        }
    }

    /// Runs one cycle holding a previously claimed slot.
    pub fn cycle_acquired(
        &self,
        guard: FlightGuard,
        snapshot: &StepRecord,
        policy: &Policy,
        params: &ControlCell,
    ) -> NavigatorLogEntry {
        let mut entry = NavigatorLogEntry::new(self.next_cycle(), Some(snapshot.step), CycleOutcome::Failed, policy);
        let summary = StateSummary::from_record(snapshot, policy).render();
        let messages = compose_prompt(&summary, &self.system_prompt);
        entry.prompt = Some(summary);

        let response = self.backend.complete(&messages);
        drop(guard);
        let raw = match response {
            Ok(raw) => raw,
            Err(e) => return fail(entry, e.to_string()),
        };
        let parsed = parse_action(&raw);
        entry.raw_response = Some(raw);
        let action = match parsed {
            Ok(a) => a,
            Err(e) => return fail(entry, e.to_string()),
        };
        entry.reasoning = action.reasoning.clone();
        entry.action = Some(action.clone());

        let sanitized = match sanitize_weights(&action.weights, self.guardrails.n_expected) {
            Ok(s) => s,
            Err(d) => {
                return fail(
                    entry,
                    format!("dimension mismatch: expected {} weights, got {}", d.expected, d.got),
                )
            }
        };
        entry.flags.clipped = sanitized.clipped;
        entry.flags.uniform_fallback = sanitized.uniform_fallback;

        let cfg = &self.guardrails;
        let applied = params.update(|current| {
            let p_hat = clamp_budget(action.p_total, current.p_total, cfg);
            (apply_ema(current, (&sanitized.weights, p_hat), cfg.beta), p_hat)
        });
        let (applied, p_hat) = applied;
        entry.flags.budget_clamped = action.p_total.is_some_and(|p| p.is_finite() && p != p_hat);
        entry.outcome = CycleOutcome::Applied;
        entry.applied = Some(applied);
        entry
    }
}

fn fail(mut entry: NavigatorLogEntry, error: String) -> NavigatorLogEntry {
    entry.outcome = CycleOutcome::Failed;
    entry.flags.retained_previous = true;
    entry.error = Some(error);
    entry
}
