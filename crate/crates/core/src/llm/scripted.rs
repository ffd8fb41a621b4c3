//! Deterministic backends so every navigator path can run offline.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{BackendError, ChatBackend, ChatMessage, Role};
use crate::navigator::StateSummary;

fn user_message(messages: &[ChatMessage]) -> Result<&str, BackendError> {
    messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map(|m| m.content.as_str())
        .ok_or_else(|| BackendError::InvalidRequest("no user message".into()))
}

/// Floor on the equalizer's raw weight so saturated channels keep a share.
pub const EQUALIZER_EPSILON: f64 = 1e-3;

/// Reads the MI column of the state summary and proposes weights
/// proportional to each channel's remaining headroom `max(log2 M - I_i, eps)`.
#[derive(Debug, Clone)]
pub struct ScriptedEqualizer {
    max_bits: f64,
    epsilon: f64,
}

impl ScriptedEqualizer {
    /// `max_bits` is `log2 M` of the constellation (2 for QPSK).
    pub fn new(max_bits: f64) -> Self {
        Self {
            max_bits,
            epsilon: EQUALIZER_EPSILON,
        }
    }

    pub fn weights_for(&self, mi: &[f64]) -> Vec<f64> {
        let raw: Vec<f64> = mi.iter().map(|i| (self.max_bits - i).max(self.epsilon)).collect();
        let sum: f64 = raw.iter().sum();
        raw.iter().map(|r| r / sum).collect()
    }

    pub fn respond(&self, summary: &StateSummary) -> String {
        let mi: Vec<f64> = summary.rows.iter().map(|r| r.mi).collect();
        let weights = self.weights_for(&mi);
        let (lo, hi) = summary
            .rows
            .iter()
            .fold((0usize, 0usize), |(lo, hi), r| {
                let i = r.index - 1;
                (
                    if r.mi < summary.rows[lo].mi { i } else { lo },
                    if r.mi > summary.rows[hi].mi { i } else { hi },
                )
            });
        let reasoning = format!(
            "Equalize MI: weight each channel by its headroom below {:.0} bits; boost channel {} (lowest MI), suppress channel {} (highest MI).",
            self.max_bits,
            lo + 1,
            hi + 1
        );
        json!({ "weights": weights, "reasoning": reasoning }).to_string()
    }
}

impl Default for ScriptedEqualizer {
    fn default() -> Self {
        Self::new(2.0)
    }
}

impl ChatBackend for ScriptedEqualizer {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let text = user_message(messages)?;
        let summary = StateSummary::parse(text).map_err(|e| BackendError::Other(e.to_string()))?;
        Ok(self.respond(&summary))
    }

    fn name(&self) -> &str {
        "equalizer"
    }
}

/// Returns the same valid control action on every call.
#[derive(Debug, Clone)]
pub struct ScriptedStatic {
    body: String,
}

impl ScriptedStatic {
    pub fn new(weights: Vec<f64>, p_total: Option<f64>, reasoning: impl Into<String>) -> Self {
        let mut obj = json!({ "weights": weights, "reasoning": reasoning.into() });
        if let Some(p) = p_total {
            obj["P_total"] = json!(p);
        }
        Self { body: obj.to_string() }
    }

    pub fn body(&self) -> &str {
        &self.body
    }
}

impl ChatBackend for ScriptedStatic {
    fn complete(&self, _messages: &[ChatMessage]) -> Result<String, BackendError> {
        Ok(self.body.clone())
    }

    fn name(&self) -> &str {
        "static"
    }
}

/// Replays a fixed list of outcomes, then repeats the last one.
#[derive(Debug)]
pub struct ScriptedSequence {
    items: Mutex<VecDeque<Result<String, BackendError>>>,
    last: Mutex<Option<Result<String, BackendError>>>,
}

impl ScriptedSequence {
    pub fn new(items: impl IntoIterator<Item = Result<String, BackendError>>) -> Self {
        Self {
            items: Mutex::new(items.into_iter().collect()),
            last: Mutex::new(None),
        }
    }
}

impl ChatBackend for ScriptedSequence {
    fn complete(&self, _messages: &[ChatMessage]) -> Result<String, BackendError> {
        let next = self.items.lock().unwrap_or_else(|e| e.into_inner()).pop_front();
        let mut last = self.last.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(item) = next {
            *last = Some(item);
        }
        last.clone()
            .unwrap_or_else(|| Err(BackendError::Other("empty script".into())))
    }

    fn name(&self) -> &str {
        "sequence"
    }
}

/// Always fails with the given error.
#[derive(Debug, Clone)]
pub struct FailingBackend(pub BackendError);

impl ChatBackend for FailingBackend {
    fn complete(&self, _messages: &[ChatMessage]) -> Result<String, BackendError> {
        Err(self.0.clone())
    }

    fn name(&self) -> &str {
        "failing"
    }
}

/// Sleeps before delegating, to emulate a slow endpoint.
pub struct DelayedBackend<B> {
    inner: B,
    delay: Duration,
    active: AtomicUsize,
    max_active: AtomicUsize,
    calls: AtomicUsize,
}

impl<B: ChatBackend> DelayedBackend<B> {
    pub fn new(inner: B, delay: Duration) -> Self {
        Self {
            inner,
            delay,
            active: AtomicUsize::new(0),
            max_active: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    /// Most calls that were ever in progress at once.
    pub fn max_concurrent(&self) -> usize {
        self.max_active.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: ChatBackend> ChatBackend for DelayedBackend<B> {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_active.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(self.delay);
        let out = self.inner.complete(messages);
        self.active.fetch_sub(1, Ordering::SeqCst);
        out
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

/// Cycles through classes of malformed output. The sequence is a pure
/// function of the seed.
pub struct FuzzBackend {
    n: usize,
    state: Mutex<(u64, ChaCha8Rng)>,
}

const FUZZ_CLASSES: u64 = 20;

impl FuzzBackend {
    pub fn new(seed: u64, n: usize) -> Self {
        Self {
            n,
            state: Mutex::new((seed % FUZZ_CLASSES, ChaCha8Rng::seed_from_u64(seed))),
        }
    }

    pub fn next_output(&self) -> String {
        let mut guard = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let (counter, rng) = &mut *guard;
        let class = *counter % FUZZ_CLASSES;
        *counter += 1;
        emit(class, self.n, rng)
    }
}

fn join(v: impl IntoIterator<Item = String>) -> String {
    v.into_iter().collect::<Vec<_>>().join(",")
}

fn emit(class: u64, n: usize, rng: &mut ChaCha8Rng) -> String {
    let rand_w = |rng: &mut ChaCha8Rng, lo: f64, hi: f64, len: usize| -> String {
        join((0..len).map(|_| format!("{}", rng.random_range(lo..hi))))
    };
    match class {
        0 => "I think the weights should stay roughly where they are.".into(),
        1 => format!("{{\"weights\": [{}", rand_w(rng, 0.0, 1.0, n)),
        2 => format!("{{\"weights\": [{}], \"reasoning\": \"mixed signs\"}}", rand_w(rng, -1.0, 1.0, n)),
        3 => format!("{{\"weights\": [NaN{}]}}", ",0.1".repeat(n.saturating_sub(1))),
        4 => format!("{{\"weights\": [Infinity{}], \"P_total\": -Infinity}}", ",0.1".repeat(n.saturating_sub(1))),
        5 => {
            let len = if rng.random_bool(0.5) { n + 1 + rng.random_range(0..5) } else { n.saturating_sub(1 + rng.random_range(0..n.max(1))) };
            format!("{{\"weights\": [{}]}}", rand_w(rng, 0.0, 1.0, len))
        }
        6 => format!("{{\"weights\": [{}], \"P_total\": 1e308}}", join((0..n).map(|_| "1e308".to_string()))),
        7 => format!(
            "{{\"weights\": [{}], \"P_total\": {}, \"temperature\": 9, \"lambda\": [100], \"extra\": {{\"nested\": true}}}}",
            rand_w(rng, 0.0, 1.0, n),
            rng.random_range(-1e6..1e6)
        ),
        8 => format!("{{\"weights\": [{}]}}", join((0..n).map(|_| "\"0.5\"".to_string()))),
        9 => format!("{{\"weights\": [{}], \"P_total\": \"thirty\"}}", rand_w(rng, 0.0, 1.0, n)),
        10 => format!("{{\"weights\": [{}], \"reasoning\": \"shut everything down\"}}", join((0..n).map(|_| "0".to_string()))),
        11 => String::new(),
        12 => format!(
            "Sure! Here is the action:\n```json\n{{\"weights\": [{}], \"P_total\": {}, \"reasoning\": [1,2]}}\n```\nHope that helps.",
            rand_w(rng, 0.0, 1.0, n),
            rng.random_range(0.0..500.0)
        ),
        13 => "{{{ \"weights\": [1, 2 } ] }} \\ \"unterminated".into(),
        14 => format!("{{\"weights\": [{}]}}", rand_w(rng, 0.0, 1.0, 10_000)),
        15 => "{\"weights\": [1e400, 1, 1]}".into(),
        16 => "{\"weights\": null, \"P_total\": 20}".into(),
        17 => format!("\u{fffd}\u{0}\u{1b}[31m{{\"weights\":[{}]}}\u{fffd}", rand_w(rng, -1e-300, 1e-300, n)),
        18 => "{\"weights\": {\"ch1\": 0.5}, \"reasoning\": \"object instead of array\"}".into(),
        _ => format!(
            "{{\"weights\": [{}], \"P_total\": {}}}",
            rand_w(rng, 0.0, 1.0, n),
            rng.random_range(0.0..200.0)
        ),
    }
}

impl ChatBackend for FuzzBackend {
    fn complete(&self, _messages: &[ChatMessage]) -> Result<String, BackendError> {
        Ok(self.next_output())
    }

    fn name(&self) -> &str {
        "fuzz"
    }
}
