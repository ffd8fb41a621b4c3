//! Guardrail outcome matrix, single-flight and prompt memorylessness.

use std::sync::{Arc, Barrier};
use std::thread;
use std::time::Duration;

use dualloop_core::control::ControlCell;
use dualloop_core::llm::{BackendError, ChatBackend, DelayedBackend, FailingBackend, ScriptedEqualizer, ScriptedSequence, ScriptedStatic};
use dualloop_core::model::{ChannelState, ControlParams, WeightVector};
use dualloop_core::navigator::{
    compose_prompt, CycleOutcome, GuardrailConfig, Navigator, NavigatorLogEntry, Policy, StateSummary,
    DEFAULT_SYSTEM_PROMPT,
};
use dualloop_core::optimizer::{Optimizer, OptimizerConfig, StepRecord};

fn snapshot() -> StepRecord {
    let mut opt = Optimizer::new(ChannelState::reference(), OptimizerConfig { n_mc: 500, ..Default::default() }, 40.0).unwrap();
    let params = ControlParams::uniform(8, 40.0);
    for _ in 0..5 {
        opt.step(&params).unwrap();
    }
    opt.step(&params).unwrap()
}

fn initial() -> ControlParams {
    ControlParams::new(WeightVector::new(vec![0.3, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1]).unwrap(), 40.0).unwrap()
}

fn run_one(backend: impl ChatBackend + 'static) -> (NavigatorLogEntry, ControlParams) {
    let nav = Navigator::new(Box::new(backend), GuardrailConfig::default());
    let cell = ControlCell::new(initial());
    let entry = nav.cycle(&snapshot(), &Policy::preset("P1").unwrap(), &cell);
    (entry, (*cell.snapshot()).clone())
}

fn reply(s: &str) -> ScriptedSequence {
    ScriptedSequence::new([Ok(s.to_string())])
}

fn assert_retained(entry: &NavigatorLogEntry, after: &ControlParams, what: &str) {
    assert_eq!(entry.outcome, CycleOutcome::Failed, "{what}");
    assert!(entry.flags.retained_previous, "{what}");
    assert!(entry.error.is_some(), "{what}");
    assert!(entry.applied.is_none(), "{what}");
    assert_eq!(after, &initial(), "{what}: params changed");
}

#[test]
fn failures_retain_previous_params() {
    let cases: Vec<(&str, Box<dyn ChatBackend>)> = vec![
        ("no json", Box::new(reply("I would keep everything as it is."))),
        ("bad json", Box::new(reply("{\"weights\": [0.1, 0.2,"))),
        ("missing weights", Box::new(reply("{\"P_total\": 30}"))),
        ("wrong length", Box::new(reply("{\"weights\": [0.5, 0.5]}"))),
        ("nan literal", Box::new(reply("{\"weights\": [NaN, 1, 1, 1, 1, 1, 1, 1]}"))),
        ("inf literal", Box::new(reply("{\"weights\": [Infinity, 1, 1, 1, 1, 1, 1, 1]}"))),
        ("overflowing literal", Box::new(reply("{\"weights\": [1e400, 1, 1, 1, 1, 1, 1, 1]}"))),
        ("connection error", Box::new(FailingBackend(BackendError::Connect("refused".into())))),
        ("timeout", Box::new(FailingBackend(BackendError::Timeout))),
        ("http 500", Box::new(FailingBackend(BackendError::HttpStatus(500)))),
    ];
    for (what, backend) in cases {
        let (entry, after) = run_one(backend);
        assert_retained(&entry, &after, what);
    }
}

#[test]
fn negative_entries_are_clipped_then_smoothed() {
    let (entry, after) = run_one(reply("{\"weights\": [-1, 1, 1, 1, 1, 1, 1, 1]}"));
    assert_eq!(entry.outcome, CycleOutcome::Applied);
    assert!(entry.flags.clipped && !entry.flags.uniform_fallback);
    // proposal [0, 1/7 x 7], beta 0.5 against [0.3, 0.1 x 7]
    let w = after.weights.as_slice();
    assert!((w[0] - 0.15).abs() < 1e-12);
    assert!((w[1] - (0.05 + 0.5 / 7.0)).abs() < 1e-12);
    assert_eq!(after.p_total, 40.0);
}

#[test]
fn unnormalized_weights_are_normalized() {
    let (entry, after) = run_one(reply("{\"weights\": [2, 2, 2, 2, 2, 2, 2, 2]}"));
    assert_eq!(entry.outcome, CycleOutcome::Applied);
    assert!(!entry.flags.clipped && !entry.flags.uniform_fallback);
    assert!((after.weights.as_slice()[0] - (0.15 + 0.0625)).abs() < 1e-12);
}

#[test]
fn all_zero_weights_fall_back_to_uniform() {
    let (entry, after) = run_one(reply("{\"weights\": [0, 0, 0, 0, 0, 0, 0, 0]}"));
    assert_eq!(entry.outcome, CycleOutcome::Applied);
    assert!(entry.flags.uniform_fallback);
    assert!((after.weights.as_slice()[0] - (0.15 + 0.0625)).abs() < 1e-12);
}

#[test]
fn huge_finite_weights_normalize_without_overflow() {
    let (entry, after) = run_one(reply("{\"weights\": [1e308, 1e308, 0, 0, 0, 0, 0, 0], \"P_total\": 1e308}"));
    assert_eq!(entry.outcome, CycleOutcome::Applied);
    assert!(entry.flags.budget_clamped);
    assert!((after.weights.as_slice()[0] - 0.4).abs() < 1e-12);
    assert_eq!(after.p_total, 70.0);
}

#[test]
fn out_of_range_budget_is_clamped() {
    for (raw, clamped) in [(1e6, 100.0), (-5.0, 1.0), (0.0, 1.0)] {
        let body = format!("{{\"weights\": [1, 1, 1, 1, 1, 1, 1, 1], \"P_total\": {raw}}}");
        let (entry, after) = run_one(reply(&body));
        assert_eq!(entry.outcome, CycleOutcome::Applied);
        assert!(entry.flags.budget_clamped, "{raw}");
        assert_eq!(after.p_total, 0.5 * 40.0 + 0.5 * clamped);
    }
    let (entry, after) = run_one(reply("{\"weights\": [1, 1, 1, 1, 1, 1, 1, 1], \"P_total\": 30}"));
    assert!(!entry.flags.budget_clamped);
    assert_eq!(after.p_total, 35.0);
}

#[test]
fn absent_budget_keeps_current() {
    let (_, after) = run_one(reply("{\"weights\": [1, 1, 1, 1, 1, 1, 1, 1], \"reasoning\": \"keep\"}"));
    assert_eq!(after.p_total, 40.0);
}

#[test]
fn reasoning_is_kept_verbatim() {
    let (entry, _) = run_one(ScriptedStatic::new(vec![0.125; 8], None, "Equal weights: already optimal."));
    assert_eq!(entry.reasoning.as_deref(), Some("Equal weights: already optimal."));
    assert!(entry.raw_response.unwrap().contains("already optimal"));
}

#[test]
fn every_cycle_logs_exactly_one_entry_with_its_prompt() {
    let nav = Navigator::new(Box::new(reply("prose")), GuardrailConfig::default());
    let cell = ControlCell::new(initial());
    let snap = snapshot();
    let policy = Policy::preset("P2").unwrap();
    let entries: Vec<_> = (0..3).map(|_| nav.cycle(&snap, &policy, &cell)).collect();
    let cycles: Vec<u64> = entries.iter().map(|e| e.cycle).collect();
    assert_eq!(cycles, vec![0, 1, 2]);
    for e in &entries {
        assert_eq!(e.step, Some(snap.step));
        assert!(e.prompt.as_ref().unwrap().ends_with("Policy: Prioritize channels 7 and 8"));
        let mut line = Vec::new();
        e.write_jsonl(&mut line).unwrap();
        assert_eq!(line.iter().filter(|b| **b == b'\n').count(), 1);
    }
}

#[test]
fn concurrent_trigger_is_skipped() {
    let slow = DelayedBackend::new(ScriptedStatic::new(vec![0.125; 8], None, "ok"), Duration::from_millis(300));
    let nav = Arc::new(Navigator::new(Box::new(slow), GuardrailConfig::default()));
    let cell = Arc::new(ControlCell::new(initial()));
    let snap = Arc::new(snapshot());
    let barrier = Arc::new(Barrier::new(2));
    let first = {
        let (nav, cell, snap, barrier) = (nav.clone(), cell.clone(), snap.clone(), barrier.clone());
        thread::spawn(move || {
            let guard = nav.try_acquire().unwrap();
            barrier.wait();
            nav.cycle_acquired(guard, &snap, &Policy::preset("P1").unwrap(), &cell)
        })
    };
    barrier.wait();
    let second = nav.cycle(&snap, &Policy::preset("P1").unwrap(), &cell);
    assert_eq!(second.outcome, CycleOutcome::Skipped);
    assert!(second.prompt.is_none());
    assert_eq!(first.join().unwrap().outcome, CycleOutcome::Applied);
    assert!(!nav.is_in_flight());
    assert_eq!(nav.cycle(&snap, &Policy::preset("P1").unwrap(), &cell).outcome, CycleOutcome::Applied);
}

/// Records every request it receives.
struct Recorder(std::sync::Mutex<Vec<String>>);

impl ChatBackend for Recorder {
    fn complete(&self, messages: &[dualloop_core::llm::ChatMessage]) -> Result<String, BackendError> {
        self.0.lock().unwrap().push(serde_json::to_string(messages).unwrap());
        Ok("{\"weights\": [3, 1, 1, 1, 1, 1, 1, 1]}".into())
    }
    fn name(&self) -> &str {
        "recorder"
    }
}

#[test]
fn requests_depend_only_on_prompt_snapshot_and_policy() {
    let rec = Arc::new(Recorder(Default::default()));
    let nav = Navigator::new(Box::new(rec.clone()), GuardrailConfig::default());
    let cell = ControlCell::new(initial());
    let snap = snapshot();
    let policy = Policy::preset("P4").unwrap();
    for _ in 0..3 {
        nav.cycle(&snap, &policy, &cell);
    }
    let sent = rec.0.lock().unwrap().clone();
    // Parameters moved between calls but the snapshot did not, so the bytes
    // must not change: no history leaks into the request.
    assert!(sent.windows(2).all(|w| w[0] == w[1]));
    let replay = compose_prompt(&StateSummary::from_record(&snap, &policy).render(), DEFAULT_SYSTEM_PROMPT);
    assert_eq!(sent[0], serde_json::to_string(&replay).unwrap());
}

#[test]
fn equalizer_reads_the_rendered_summary() {
    let snap = snapshot();
    let (entry, after) = run_one(ScriptedEqualizer::default());
    assert_eq!(entry.outcome, CycleOutcome::Applied);
    let action = entry.action.unwrap();
    // weakest channel (index 0 on reference gains) gets the largest weight
    let argmax = action.weights.iter().enumerate().fold(0, |b, (i, w)| if *w > action.weights[b] { i } else { b });
    let argmin_mi = snap.mi.iter().enumerate().fold(0, |b, (i, m)| if *m < snap.mi[b] { i } else { b });
    assert_eq!(argmax, argmin_mi);
    assert!(after.weights.as_slice().iter().all(|w| *w > 0.0));
}
