//! Telemetry frames and the bounded queue they travel through.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crossbeam_queue::ArrayQueue;
use serde::{Deserialize, Serialize};

use crate::optimizer::StepRecord;

/// Wire form of one optimizer step, shared by the JSONL export, the on-disk
/// telemetry log and the live stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub step: u64,
    pub lambda: Vec<f64>,
    #[serde(rename = "P")]
    pub powers: Vec<f64>,
    pub mi: Vec<f64>,
    #[serde(rename = "w")]
    pub weights: Vec<f64>,
    pub p_total: f64,
    pub sum_mi: f64,
    #[serde(rename = "weighted_obj")]
    pub weighted_objective: f64,
    #[serde(default)]
    pub events: Vec<String>,
}

impl From<&StepRecord> for TelemetryFrame {
    fn from(r: &StepRecord) -> Self {
        Self {
            step: r.step,
            lambda: r.lambda.clone(),
            powers: r.powers.clone(),
            mi: r.mi.clone(),
            weights: r.weights.clone(),
            p_total: r.p_total,
            sum_mi: r.sum_mi,
            weighted_objective: r.weighted_objective,
            events: r.events.clone(),
        }
    }
}

/// Receives step records from the optimizer. Implementations must not block.
pub trait TelemetrySink: Send + Sync {
    fn publish(&self, record: StepRecord);
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullSink;

impl TelemetrySink for NullSink {
    fn publish(&self, _record: StepRecord) {}
}

/// Keeps every record in memory. For tests and short runs.
#[derive(Debug, Default)]
pub struct VecSink {
    records: Mutex<Vec<StepRecord>>,
}

impl VecSink {
    pub fn take(&self) -> Vec<StepRecord> {
        std::mem::take(&mut *self.records.lock().unwrap_or_else(|e| e.into_inner()))
    }
}

impl TelemetrySink for VecSink {
    fn publish(&self, record: StepRecord) {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).push(record);
    }
}

/// Fixed-capacity queue that drops the oldest record when full.
#[derive(Debug)]
pub struct TelemetryQueue {
    queue: ArrayQueue<StepRecord>,
    dropped: AtomicU64,
}

impl TelemetryQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            queue: ArrayQueue::new(capacity.max(1)),
            dropped: AtomicU64::new(0),
        }
    }

    pub fn pop(&self) -> Option<StepRecord> {
        self.queue.pop()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Records displaced by overflow so far.
    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}

impl TelemetrySink for TelemetryQueue {
    fn publish(&self, record: StepRecord) {
        if self.queue.force_push(record).is_some() {
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
    }
}
