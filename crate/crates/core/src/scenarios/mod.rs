//! Scripted, seeded closed-loop runs with metrics.
//!
//! A scenario drives the optimizer and (optionally) a navigator in lockstep
//! on one thread: steps are the unit of time and the navigator reads the
//! record of steps `0, K, 2K, ...`, its write taking effect from the next
//! step, so a run is a pure function of its configuration and backend.

mod experiments;
mod export;

pub use experiments::{
    policy_scenario, resilience_scenario, run_policy_experiment, run_resilience, static_backend, Overrides,
    PolicyId, ResilienceReport,
};
pub use export::{export_report, read_jsonl, ExportFormat};

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::control::ControlCell;
use crate::error::{Error, Result};
use crate::llm::ChatBackend;
use crate::mi::{Constellation, SampleSet};
use crate::model::{Allocation, ChannelState, ControlParams};
use crate::navigator::{GuardrailConfig, Navigator, NavigatorLogEntry, Policy};
use crate::optimizer::{evaluate, Optimizer, OptimizerConfig, StepRecord};
use crate::telemetry::TelemetryFrame;

/// Tolerance used when counting power-constraint violations.
pub const CONSTRAINT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainChange {
    pub step: u64,
    pub gains2: Vec<f64>,
}

/// How the allocation evolves during a run.
#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    /// Projected gradient ascent.
    Optimize,
    /// A fixed allocation that is only evaluated (the water-filling reference).
    Fixed(Allocation),
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub label: String,
    pub channels: ChannelState,
    pub gain_schedule: Vec<GainChange>,
    pub policy: Policy,
    pub interval: u64,
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub p_total: f64,
    pub optimizer: OptimizerConfig,
    pub guardrails: GuardrailConfig,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub steps: u64,
    /// Mean of the sum MI over steps `warmup..steps`.
    pub mean_sum_mi: f64,
    pub final_mi: Vec<f64>,
    /// `max_i I_i - min_i I_i` at the final step.
    pub final_spread: f64,
    pub final_weights: Vec<f64>,
    pub final_p_total: f64,
    pub constraint_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub channels: usize,
    pub metrics: MetricsReport,
    pub frames: Vec<TelemetryFrame>,
    #[serde(skip)]
    pub navigator_log: Vec<NavigatorLogEntry>,
}

/// `max - min` of a non-empty vector.
pub fn compute_spread(mi: &[f64]) -> Result<f64> {
    if mi.is_empty() {
        return Err(Error::invalid("mi", "spread of an empty vector"));
    }
    let max = mi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = mi.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps >= self.total_steps {
            return Err(Error::invalid(
                "warmup",
                format!("warmup {} must be below total steps {}", self.warmup_steps, self.total_steps),
            ));
        }
        if self.interval == 0 {
            return Err(Error::invalid("interval", "navigator interval must be at least 1 step"));
        }
        if self.gain_schedule.windows(2).any(|w| w[0].step > w[1].step) {
            return Err(Error::invalid("gain schedule", "disturbances must be sorted by step"));
        }
        self.guardrails.validate()?;
        if self.guardrails.n_expected != self.channels.len() {
            return Err(Error::DimensionMismatch {
                expected: self.channels.len(),
                got: self.guardrails.n_expected,
            });
        }
        if !(self.p_total >= self.guardrails.p_min && self.p_total <= self.guardrails.p_max) {
            return Err(Error::invalid("p_total", "initial budget outside the guardrail range"));
        }
        self.optimizer.validate(self.channels.len(), self.guardrails.p_min)
    }

    /// Runs the scenario. With `backend == None` the weights stay uniform.
    pub fn run(&self, backend: Option<Box<dyn ChatBackend>>) -> Result<RunReport> {
        self.validate()?;
        let n = self.channels.len();
        let params = ControlCell::new(ControlParams::uniform(n, self.p_total));
        let navigator = backend.map(|b| Navigator::new(b, self.guardrails.clone()));
        let mut opt = Optimizer::new(self.channels.clone(), self.optimizer.clone(), self.p_total)?;
        let constellation = Constellation::qpsk();
        let mut channels = self.channels.clone();

        let mut frames = Vec::with_capacity(self.total_steps as usize);
        let mut log = Vec::new();
        let mut violations = 0;
        let mut schedule = self.gain_schedule.iter().peekable();

        for step in 0..self.total_steps {
            while let Some(change) = schedule.next_if(|c| c.step <= step) {
                opt.set_gains(change.gains2.clone())?;
                channels.set_gains(change.gains2.clone())?;
            }
            let current = params.snapshot();
            if !current.satisfies(self.guardrails.p_min, self.guardrails.p_max) {
                violations += 1;
            }
            let record = match &self.mode {
                Mode::Optimize => match opt.step(&current) {
                    Ok(r) => r,
                    Err(e) => {
                        warn!(step, "scenario step skipped: {e}");
                        continue;
                    }
                },
                Mode::Fixed(alloc) => fixed_record(step, alloc, &channels, &current, &self.optimizer, &constellation)?,
            };
            if record.power_after > record.p_total + CONSTRAINT_TOL {
                violations += 1;
            }
            if let Some(nav) = &navigator {
                if step % self.interval == 0 {
                    let entry = nav.cycle(&record, &self.policy, &params);
                    opt.note_event(format!("navigator_{}", entry.outcome.as_str()));
                    log.push(entry);
                }
            }
            frames.push(TelemetryFrame::from(&record));
        }

        let metrics = self.metrics(&frames, violations)?;
        Ok(RunReport {
            channels: n,
            metrics,
            frames,
            navigator_log: log,
        })
    }

    fn metrics(&self, frames: &[TelemetryFrame], violations: u64) -> Result<MetricsReport> {
        let window: Vec<f64> = frames
            .iter()
            .filter(|f| f.step >= self.warmup_steps)
            .map(|f| f.sum_mi)
            .collect();
        let last = frames.last().ok_or_else(|| Error::invalid("run", "no steps executed"))?;
        Ok(MetricsReport {
            label: self.label.clone(),
            steps: frames.len() as u64,
            mean_sum_mi: window.iter().sum::<f64>() / window.len().max(1) as f64,
            final_mi: last.mi.clone(),
            final_spread: compute_spread(&last.mi)?,
            final_weights: last.weights.clone(),
            final_p_total: last.p_total,
            constraint_violations: violations,
        })
    }
}

fn fixed_record(
    step: u64,
    alloc: &Allocation,
    channels: &ChannelState,
    params: &ControlParams,
    cfg: &OptimizerConfig,
    c: &Constellation,
) -> Result<StepRecord> {
    let samples = SampleSet::draw(cfg.n_mc, cfg.seed, step)?;
    let eval = evaluate(alloc, channels, c, &samples)?;
    let w = params.weights.as_slice();
    Ok(StepRecord {
        step,
        lambda: alloc.lambda().to_vec(),
        powers: alloc.powers(),
        weighted_objective: eval.mi.iter().zip(w).map(|(i, w)| i * w).sum(),
        sum_mi: eval.mi.iter().sum(),
        mi: eval.mi,
        gains2: channels.gains2().to_vec(),
        weights: w.to_vec(),
        p_total: params.p_total,
        power_after: alloc.total_power(),
        events: Vec::new(),
        timestamp_ms: 0,
    })
}
