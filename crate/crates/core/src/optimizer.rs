//! Projected gradient ascent over the amplitude vector.
//!
//! One iteration is: evaluate the per-channel MI and its derivative at the
//! current allocation, take the weighted ascent step, clamp every amplitude
//! to the floor `lambda_min`, then scale back onto the power ball.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::Receiver;
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::control::ControlCell;
use crate::error::{Error, Result};
use crate::mi::{mi_estimate_full, Constellation, EffectiveAmplitude, SampleSet};
use crate::model::{Allocation, ChannelState, ControlParams, WeightVector};
use crate::telemetry::TelemetrySink;

/// Where the allocation starts before the first step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialAllocation {
    /// Every amplitude at the clamp floor, as if starting from zero power.
    #[default]
    Floor,
    /// Equal split of the budget.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub eta: f64,
    pub lambda_min: f64,
    pub n_mc: usize,
    /// Fresh samples every step; otherwise one fixed set for the whole run.
    pub resample: bool,
    pub seed: u64,
    pub initial: InitialAllocation,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            lambda_min: 0.1,
            n_mc: 10_000,
            resample: true,
            seed: 1,
            initial: InitialAllocation::Floor,
        }
    }
}

impl OptimizerConfig {
    /// `p_min` is the smallest budget the guardrails can ever write; the
    /// floor energy must stay below it.
    pub fn validate(&self, n: usize, p_min: f64) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::invalid("eta", format!("{} must be positive", self.eta)));
        }
        if !(self.lambda_min.is_finite() && self.lambda_min > 0.0) {
            return Err(Error::invalid("lambda_min", format!("{} must be positive", self.lambda_min)));
        }
        if self.n_mc == 0 {
            return Err(Error::invalid("n_mc", "must be at least 1"));
        }
        let floor = n as f64 * self.lambda_min * self.lambda_min;
        if floor >= p_min {
            return Err(Error::invalid(
                "lambda_min",
                format!("floor energy {floor} is not below the minimum budget {p_min}"),
            ));
        }
        Ok(())
    }
}

/// A step that could not be applied. The allocation is left unchanged.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("non-finite gradient on channel {channel}")]
    NonFiniteGradient { channel: usize },
    #[error(transparent)]
    Input(#[from] Error),
}

/// Snapshot of one optimizer iteration.
///
/// `lambda`, `powers` and `mi` describe the point the gradient was evaluated
/// at; `weights` and `p_total` are the parameters the step used, and
/// `power_after` is the total power once clamping and projection ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lambda: Vec<f64>,
    pub powers: Vec<f64>,
    pub mi: Vec<f64>,
    pub gains2: Vec<f64>,
    pub weights: Vec<f64>,
    pub p_total: f64,
    pub weighted_objective: f64,
    pub sum_mi: f64,
    pub power_after: f64,
    pub events: Vec<String>,
    pub timestamp_ms: u64,
}

impl StepRecord {
    pub fn total_power(&self) -> f64 {
        self.powers.iter().sum()
    }
}

/// Per-channel MI and its derivative with respect to `lambda_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mi: Vec<f64>,
    pub dmi_dlambda: Vec<f64>,
}

pub fn evaluate(alloc: &Allocation, channels: &ChannelState, c: &Constellation, s: &SampleSet) -> Result<Evaluation> {
    if alloc.len() != channels.len() {
        return Err(Error::DimensionMismatch {
            expected: channels.len(),
            got: alloc.len(),
        });
    }
    let mut mi = Vec::with_capacity(alloc.len());
    let mut dmi_dlambda = Vec::with_capacity(alloc.len());
    for (h, l) in channels.amplitudes().zip(alloc.lambda()) {
        let est = mi_estimate_full(EffectiveAmplitude::new(h * l)?, c, channels.noise(), s);
        mi.push(est.bits);
        // chain rule through a = |h| lambda
        dmi_dlambda.push(h * est.gradient);
    }
    Ok(Evaluation { mi, dmi_dlambda })
}

fn ascend(alloc: &Allocation, eval: &Evaluation, w: &WeightVector, eta: f64) -> Result<Allocation, StepError> {
    if w.len() != alloc.len() {
        return Err(Error::DimensionMismatch {
            expected: alloc.len(),
            got: w.len(),
        }
        .into());
    }
    let mut next = alloc.clone();
    for (i, (l, (wi, g))) in next
        .lambda_mut()
        .iter_mut()
        .zip(w.as_slice().iter().zip(&eval.dmi_dlambda))
        .enumerate()
    {
        let updated = *l + eta * wi * g;
        if !updated.is_finite() {
            return Err(StepError::NonFiniteGradient { channel: i });
        }
        *l = updated;
    }
    Ok(next)
}

/// Unprojected ascent step `lambda_i + eta * w_i * dI_i/dlambda_i`.
///
/// The result may be infeasible until [`clamp_floor`] and [`project_ball`]
/// have run.
pub fn gradient_step(
    alloc: &Allocation,
    channels: &ChannelState,
    params: &ControlParams,
    cfg: &OptimizerConfig,
    c: &Constellation,
    s: &SampleSet,
) -> Result<Allocation, StepError> {
    let eval = evaluate(alloc, channels, c, s)?;
    ascend(alloc, &eval, &params.weights, cfg.eta)
}

/// `lambda_i <- max(lambda_i, lambda_min)`.
pub fn clamp_floor(alloc: &Allocation, lambda_min: f64) -> Allocation {
    let mut out = alloc.clone();
    clamp_in_place(out.lambda_mut(), lambda_min);
    out
}

/// Scales `lambda` onto the ball `sum lambda^2 <= p_total` when outside it.
pub fn project_ball(alloc: &Allocation, p_total: f64) -> Allocation {
    let mut out = alloc.clone();
    project_in_place(out.lambda_mut(), p_total);
    out
}

fn clamp_in_place(lambda: &mut [f64], lambda_min: f64) -> bool {
    let mut bound = false;
    for l in lambda.iter_mut() {
        // also catches a negative ascent step
        if *l < lambda_min {
            *l = lambda_min;
            bound = true;
        }
    }
    bound
}

fn project_in_place(lambda: &mut [f64], p_total: f64) -> bool {
    let norm2: f64 = lambda.iter().map(|l| l * l).sum();
    if norm2 <= p_total {
        return false;
    }
    let scale = (p_total / norm2).sqrt();
    lambda.iter_mut().for_each(|l| *l *= scale);
    // Rounding can leave the sum a few ulps above the radius.
    while lambda.iter().map(|l| l * l).sum::<f64>() > p_total {
        lambda.iter_mut().for_each(|l| *l *= 1.0 - f64::EPSILON);
    }
    true
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Owns the allocation and advances it one iteration at a time.
#[derive(Debug, Clone)]
pub struct Optimizer {
    alloc: Allocation,
    channels: ChannelState,
    constellation: Constellation,
    cfg: OptimizerConfig,
    fixed: Option<SampleSet>,
    step: u64,
    pending_events: Vec<String>,
}

impl Optimizer {
    pub fn new(channels: ChannelState, cfg: OptimizerConfig, p_total: f64) -> Result<Self> {
        let n = channels.len();
        let alloc = match cfg.initial {
            InitialAllocation::Floor => Allocation::constant(n, cfg.lambda_min),
            InitialAllocation::Uniform => Allocation::uniform(n, p_total),
        };
        Self::with_allocation(channels, cfg, alloc)
    }

    pub fn with_allocation(channels: ChannelState, cfg: OptimizerConfig, alloc: Allocation) -> Result<Self> {
        if alloc.len() != channels.len() {
            return Err(Error::DimensionMismatch {
                expected: channels.len(),
                got: alloc.len(),
            });
        }
        if cfg.n_mc == 0 {
            return Err(Error::invalid("n_mc", "must be at least 1"));
        }
        let fixed = if cfg.resample {
            None
        } else {
            Some(SampleSet::draw(cfg.n_mc, cfg.seed, 0)?)
        };
        Ok(Self {
            alloc,
            channels,
            constellation: Constellation::qpsk(),
            cfg,
            fixed,
            step: 0,
            pending_events: Vec::new(),
        })
    }

    pub fn allocation(&self) -> &Allocation {
        &self.alloc
    }

    pub fn channels(&self) -> &ChannelState {
        &self.channels
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    /// Replaces the channel gains; the next step sees the new environment.
    pub fn set_gains(&mut self, gains2: Vec<f64>) -> Result<()> {
        self.channels.set_gains(gains2)?;
        self.pending_events.push("gains_changed".into());
        Ok(())
    }

    /// Attaches a free-form event tag to the next record.
    pub fn note_event(&mut self, event: impl Into<String>) {
        self.pending_events.push(event.into());
    }

    fn samples(&self) -> Result<std::borrow::Cow<'_, SampleSet>> {
        Ok(match &self.fixed {
            Some(s) => std::borrow::Cow::Borrowed(s),
            None => std::borrow::Cow::Owned(SampleSet::draw(self.cfg.n_mc, self.cfg.seed, self.step)?),
        })
    }

    /// Runs one full iteration under `params`. On error the allocation is
    /// unchanged and the step counter still advances.
    pub fn step(&mut self, params: &ControlParams) -> Result<StepRecord, StepError> {
        let result = self.try_step(params);
        self.step += 1;
        result
    }

    fn try_step(&mut self, params: &ControlParams) -> Result<StepRecord, StepError> {
        let samples = self.samples()?;
        let eval = evaluate(&self.alloc, &self.channels, &self.constellation, &samples)?;
        drop(samples);
        let mut next = ascend(&self.alloc, &eval, &params.weights, self.cfg.eta)?;

        let mut events = std::mem::take(&mut self.pending_events);
        if clamp_in_place(next.lambda_mut(), self.cfg.lambda_min) {
            events.push("clamped".into());
        }
        if project_in_place(next.lambda_mut(), params.p_total) {
            events.push("projected".into());
        }

        let w = params.weights.as_slice();
        let record = StepRecord {
            step: self.step,
            lambda: self.alloc.lambda().to_vec(),
            powers: self.alloc.powers(),
            weighted_objective: eval.mi.iter().zip(w).map(|(i, w)| i * w).sum(),
            sum_mi: eval.mi.iter().sum(),
            mi: eval.mi,
            gains2: self.channels.gains2().to_vec(),
            weights: w.to_vec(),
            p_total: params.p_total,
            power_after: next.total_power(),
            events,
            timestamp_ms: now_ms(),
        };
        self.alloc = next;
        Ok(record)
    }
}

/// Wiring for [`run_loop`].
pub struct LoopContext {
    pub params: Arc<ControlCell>,
    pub sink: Arc<dyn TelemetrySink>,
    pub stop: Arc<AtomicBool>,
    /// Operator gain changes, applied before the next step.
    pub gains: Option<Receiver<Vec<f64>>>,
    /// Minimum wall time per step; `None` runs unthrottled.
    pub pacing: Option<Duration>,
    pub max_steps: Option<u64>,
}

/// Iterates until `stop` is raised (or `max_steps` is reached), reading the
/// control parameters afresh every iteration. Failed steps are logged and
/// skipped. Returns the optimizer for inspection.
pub fn run_loop(mut opt: Optimizer, ctx: &LoopContext) -> Optimizer {
    while !ctx.stop.load(Ordering::Relaxed) {
        if ctx.max_steps.is_some_and(|m| opt.steps_done() >= m) {
            break;
        }
        let started = Instant::now();
        if let Some(rx) = &ctx.gains {
            while let Ok(g) = rx.try_recv() {
                if let Err(e) = opt.set_gains(g) {
                    warn!("rejected gain update: {e}");
                }
            }
        }
        let params = ctx.params.snapshot();
        match opt.step(&params) {
            Ok(record) => ctx.sink.publish(record),
            Err(e) => warn!(step = opt.steps_done() - 1, "optimizer step skipped: {e}"),
        }
        if let Some(p) = ctx.pacing {
            if let Some(rest) = p.checked_sub(started.elapsed()) {
                std::thread::sleep(rest);
            }
        }
    }
    opt
}
