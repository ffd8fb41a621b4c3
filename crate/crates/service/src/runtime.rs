//! The live runtime: optimizer, navigator and telemetry writer on their own
//! threads, coupled only through the parameter cell, snapshots and queues.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use dualloop_core::control::ControlCell;
use dualloop_core::llm::ChatBackend;
use dualloop_core::model::{ChannelState, ControlParams};
use dualloop_core::navigator::{clamp_budget, CycleOutcome, Navigator, NavigatorLogEntry, Policy};
use dualloop_core::optimizer::{run_loop, LoopContext, Optimizer, StepRecord};
use dualloop_core::scenarios::CONSTRAINT_TOL;
use dualloop_core::telemetry::{TelemetryFrame, TelemetryQueue, TelemetrySink};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;
use tracing::{error, info, warn};

use crate::config::{ConfigError, RuntimeConfig, Trigger};

/// Rejected operator input.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error("expected {expected} gains, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavigatorPhase {
    /// No backend configured.
    Absent,
    Paused,
    Idle,
    InFlight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavigatorStatus {
    pub phase: NavigatorPhase,
    pub backend: String,
    pub trigger: Trigger,
    pub last_error: Option<String>,
}

#[derive(Debug, Default)]
struct Counters {
    steps: AtomicU64,
    applied: AtomicU64,
    skipped: AtomicU64,
    failed: AtomicU64,
    constraint_checks: AtomicU64,
    constraint_violations: AtomicU64,
    frames_streamed: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub steps: u64,
    pub cycles_applied: u64,
    pub cycles_skipped: u64,
    pub cycles_failed: u64,
    pub constraint_checks: u64,
    pub constraint_violations: u64,
    pub telemetry_dropped: u64,
    pub frames_streamed: u64,
}

/// One consistent view of the runtime for `/api/state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeState {
    /// Latest completed optimizer step, if any.
    pub frame: Option<TelemetryFrame>,
    pub gains: Vec<f64>,
    pub params: ControlParams,
    pub policy: String,
    pub navigator: NavigatorStatus,
    pub counters: CounterSnapshot,
}

struct Shared {
    cfg: RuntimeConfig,
    n: usize,
    params: Arc<ControlCell>,
    policy: RwLock<Policy>,
    latest: RwLock<Option<Arc<StepRecord>>>,
    log: Mutex<VecDeque<NavigatorLogEntry>>,
    log_file: Mutex<Option<BufWriter<File>>>,
    counters: Counters,
    navigator: Option<Arc<Navigator>>,
    nav_enabled: AtomicBool,
    last_error: Mutex<Option<String>>,
    stop: Arc<AtomicBool>,
    frames: broadcast::Sender<TelemetryFrame>,
    queue: Option<Arc<TelemetryQueue>>,
    step_trigger: Option<(u64, mpsc::Sender<Arc<StepRecord>>)>,
    gains_tx: Mutex<mpsc::Sender<Vec<f64>>>,
}

impl Shared {
    fn record_entry(&self, entry: NavigatorLogEntry) {
        let counter = match entry.outcome {
            CycleOutcome::Applied => &self.counters.applied,
            CycleOutcome::Skipped => &self.counters.skipped,
            CycleOutcome::Failed => &self.counters.failed,
        };
        counter.fetch_add(1, Ordering::Relaxed);
        if entry.outcome == CycleOutcome::Failed {
            *lock(&self.last_error) = entry.error.clone();
        } else if entry.outcome == CycleOutcome::Applied {
            *lock(&self.last_error) = None;
        }
        if let Some(w) = lock(&self.log_file).as_mut() {
            if let Err(e) = entry.write_jsonl(&mut *w).and_then(|_| w.flush()) {
                warn!("navigator log write failed: {e}");
            }
        }
        let mut log = lock(&self.log);
        if log.len() == self.cfg.telemetry.log_capacity {
            log.pop_front();
        }
        log.push_back(entry);
    }

    fn latest(&self) -> Option<Arc<StepRecord>> {
        self.latest.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn policy(&self) -> Policy {
        self.policy.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Optimizer-side sink: never blocks, never waits on the navigator.
struct RuntimeSink(Arc<Shared>);

impl TelemetrySink for RuntimeSink {
    fn publish(&self, record: StepRecord) {
        let s = &self.0;
        s.counters.steps.store(record.step + 1, Ordering::Relaxed);
        s.counters.constraint_checks.fetch_add(1, Ordering::Relaxed);
        if record.power_after > record.p_total + CONSTRAINT_TOL {
            s.counters.constraint_violations.fetch_add(1, Ordering::Relaxed);
        }
        if record.step % s.cfg.telemetry.decimation == 0 && s.frames.receiver_count() > 0 {
            let _ = s.frames.send(TelemetryFrame::from(&record));
            s.counters.frames_streamed.fetch_add(1, Ordering::Relaxed);
        }
        let record = Arc::new(record);
        *s.latest.write().unwrap_or_else(|e| e.into_inner()) = Some(record.clone());
        if let Some((k, tx)) = &s.step_trigger {
            if record.step % k == 0 {
                let _ = tx.send(record.clone());
            }
        }
        if let Some(q) = &s.queue {
            q.publish(Arc::unwrap_or_clone(record));
        }
    }
}

#[derive(Debug, Error)]
pub enum StartError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Setup(String),
}

/// Handle to a running runtime. Dropping it without [`Runtime::shutdown`]
/// leaves the threads running until process exit.
pub struct Runtime {
    shared: Arc<Shared>,
    optimizer: Option<JoinHandle<Optimizer>>,
    helpers: Vec<JoinHandle<()>>,
}

fn open_append(path: &Path) -> Result<BufWriter<File>, StartError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map(BufWriter::new)
        .map_err(|source| StartError::Io {
            path: path.display().to_string(),
            source,
        })
}

impl Runtime {
    /// Validates `cfg`, then starts the optimizer, the navigator ticker (if
    /// a backend is given) and the telemetry writer (if a path is set).
    pub fn start(cfg: RuntimeConfig, backend: Option<Box<dyn ChatBackend>>) -> Result<Self, StartError> {
        cfg.validate()?;
        let channels: ChannelState = cfg.channels()?;
        let n = channels.len();
        let optimizer = Optimizer::new(channels, cfg.optimizer.clone(), cfg.system.p_total)
            .map_err(|e| StartError::Setup(e.to_string()))?;
        let policy = Policy::new(cfg.navigator.policy.clone()).map_err(|e| StartError::Setup(e.to_string()))?;

        let navigator = match backend {
            Some(b) => {
                let mut nav = Navigator::new(b, cfg.guardrails.clone());
                if let Some(path) = &cfg.navigator.system_prompt_file {
                    let text = std::fs::read_to_string(path).map_err(|source| StartError::Io {
                        path: path.display().to_string(),
                        source,
                    })?;
                    nav = nav.with_system_prompt(text);
                }
                Some(Arc::new(nav))
            }
            None => None,
        };
        let log_file = cfg.telemetry.navigator_log.as_deref().map(open_append).transpose()?;
        let telemetry_file = cfg.telemetry.path.as_deref().map(open_append).transpose()?;
        let queue = telemetry_file
            .is_some()
            .then(|| Arc::new(TelemetryQueue::new(cfg.telemetry.queue_capacity)));

        let (trigger_tx, trigger_rx) = mpsc::channel();
        let step_trigger = match (cfg.navigator.trigger, &navigator) {
            (Trigger::Steps(k), Some(_)) => Some((k, trigger_tx)),
            _ => None,
        };
        let (gains_tx, gains_rx) = mpsc::channel();
        let (frames, _) = broadcast::channel(256);
        let stop = Arc::new(AtomicBool::new(false));
        let params = Arc::new(ControlCell::new(ControlParams::uniform(n, cfg.system.p_total)));

        let shared = Arc::new(Shared {
            nav_enabled: AtomicBool::new(cfg.navigator.enabled),
            cfg,
            n,
            params: params.clone(),
            policy: RwLock::new(policy),
            latest: RwLock::new(None),
            log: Mutex::new(VecDeque::new()),
            log_file: Mutex::new(log_file),
            counters: Counters::default(),
            navigator,
            last_error: Mutex::new(None),
            stop: stop.clone(),
            frames,
            queue: queue.clone(),
            step_trigger,
            gains_tx: Mutex::new(gains_tx),
        });

        let mut helpers = Vec::new();
        if let (Some(q), Some(file)) = (queue, telemetry_file) {
            let stop = stop.clone();
            helpers.push(spawn("telemetry", move || write_telemetry(&q, file, &stop)));
        }
        if shared.navigator.is_some() {
            let sh = shared.clone();
            helpers.push(spawn("navigator", move || navigator_ticker(sh, trigger_rx)));
        }
        let ctx = LoopContext {
            params,
            sink: Arc::new(RuntimeSink(shared.clone())),
            stop,
            gains: Some(gains_rx),
            pacing: shared.cfg.step_period(),
            max_steps: None,
        };
        let optimizer = thread::Builder::new()
            .name("optimizer".into())
            .spawn(move || run_loop(optimizer, &ctx))
            .map_err(|e| StartError::Setup(e.to_string()))?;
        info!(channels = n, backend = %shared.cfg.llm.backend, "runtime started");
        Ok(Self {
            shared,
            optimizer: Some(optimizer),
            helpers,
        })
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.shared.cfg
    }

    pub fn channel_count(&self) -> usize {
        self.shared.n
    }

    pub fn state(&self) -> RuntimeState {
        let s = &self.shared;
        let latest = s.latest();
        RuntimeState {
            frame: latest.as_deref().map(TelemetryFrame::from),
            gains: latest
                .as_ref()
                .map(|r| r.gains2.clone())
                .unwrap_or_else(|| s.cfg.system.gains.clone()),
            params: (*s.params.snapshot()).clone(),
            policy: s.policy().text().to_string(),
            navigator: self.navigator_status(),
            counters: self.counters(),
        }
    }

    pub fn navigator_status(&self) -> NavigatorStatus {
        let s = &self.shared;
        let phase = match &s.navigator {
            None => NavigatorPhase::Absent,
            Some(n) if n.is_in_flight() => NavigatorPhase::InFlight,
            Some(_) if !s.nav_enabled.load(Ordering::Relaxed) => NavigatorPhase::Paused,
            Some(_) => NavigatorPhase::Idle,
        };
        NavigatorStatus {
            phase,
            backend: s.navigator.as_ref().map_or("none", |n| n.backend_name()).to_string(),
            trigger: s.cfg.navigator.trigger,
            last_error: lock(&s.last_error).clone(),
        }
    }

    pub fn counters(&self) -> CounterSnapshot {
        let c = &self.shared.counters;
        CounterSnapshot {
            steps: c.steps.load(Ordering::Relaxed),
            cycles_applied: c.applied.load(Ordering::Relaxed),
            cycles_skipped: c.skipped.load(Ordering::Relaxed),
            cycles_failed: c.failed.load(Ordering::Relaxed),
            constraint_checks: c.constraint_checks.load(Ordering::Relaxed),
            constraint_violations: c.constraint_violations.load(Ordering::Relaxed),
            telemetry_dropped: self.shared.queue.as_ref().map_or(0, |q| q.dropped()),
            frames_streamed: c.frames_streamed.load(Ordering::Relaxed),
        }
    }

    /// Takes effect at the next navigator cycle.
    pub fn set_policy(&self, text: &str) -> Result<(), OperatorError> {
        let policy = Policy::new(text).map_err(|e| OperatorError::Invalid(e.to_string()))?;
        *self.shared.policy.write().unwrap_or_else(|e| e.into_inner()) = policy;
        Ok(())
    }

    /// Queues new channel gains for the optimizer's next step.
    pub fn set_gains(&self, gains: Vec<f64>) -> Result<(), OperatorError> {
        if gains.len() != self.shared.n {
            return Err(OperatorError::WrongLength {
                expected: self.shared.n,
                got: gains.len(),
            });
        }
        let noise = *self.shared.cfg.channels().expect("validated at start").noise();
        ChannelState::new(gains.clone(), noise).map_err(|e| OperatorError::Invalid(e.to_string()))?;
        lock(&self.shared.gains_tx)
            .send(gains)
            .map_err(|_| OperatorError::Invalid("optimizer is not running".into()))
    }

    /// Clamps the budget into the guardrail range and writes it; returns the
    /// applied value. Weights are left as they are.
    pub fn set_budget(&self, raw: f64) -> Result<f64, OperatorError> {
        if !raw.is_finite() {
            return Err(OperatorError::Invalid(format!("p_total must be finite, got {raw}")));
        }
        let g = &self.shared.cfg.guardrails;
        let (_, applied) = self.shared.params.update(|cur| {
            let p = clamp_budget(Some(raw), cur.p_total, g);
            (
                ControlParams {
                    weights: cur.weights.clone(),
                    p_total: p,
                },
                p,
            )
        });
        Ok(applied)
    }

    /// Pauses or resumes the navigator; the optimizer is unaffected.
    pub fn set_navigator_enabled(&self, enabled: bool) {
        self.shared.nav_enabled.store(enabled, Ordering::Relaxed);
    }

    /// The last `limit` navigator log entries, oldest first.
    pub fn llm_log(&self, limit: usize) -> Vec<NavigatorLogEntry> {
        let log = lock(&self.shared.log);
        log.iter().skip(log.len().saturating_sub(limit)).cloned().collect()
    }

    /// Decimated stream of telemetry frames.
    pub fn subscribe(&self) -> broadcast::Receiver<TelemetryFrame> {
        self.shared.frames.subscribe()
    }

    /// Stops every thread, drains telemetry and returns the optimizer.
    /// An in-flight backend call is abandoned, not awaited.
    pub fn shutdown(mut self) -> Option<Optimizer> {
        self.shared.stop.store(true, Ordering::Relaxed);
        let opt = self.optimizer.take().and_then(|h| h.join().ok());
        for h in self.helpers.drain(..) {
            let _ = h.join();
        }
        if let Some(w) = lock(&self.shared.log_file).as_mut() {
            let _ = w.flush();
        }
        info!("runtime stopped");
        opt
    }
}

fn spawn(name: &str, f: impl FnOnce() + Send + 'static) -> JoinHandle<()> {
    thread::Builder::new()
        .name(name.into())
        .spawn(f)
        .expect("thread spawn")
}

fn write_telemetry(queue: &TelemetryQueue, mut out: BufWriter<File>, stop: &AtomicBool) {
    let drain = |out: &mut BufWriter<File>| -> bool {
        let mut wrote = false;
        while let Some(r) = queue.pop() {
            wrote = true;
            let frame = TelemetryFrame::from(&r);
            if serde_json::to_writer(&mut *out, &frame)
                .map_err(std::io::Error::other)
                .and_then(|_| out.write_all(b"\n"))
                .is_err()
            {
                error!("telemetry write failed; dropping frame");
            }
        }
        wrote
    };
    while !stop.load(Ordering::Relaxed) {
        if !drain(&mut out) {
            let _ = out.flush();
            thread::sleep(Duration::from_millis(5));
        }
    }
    drain(&mut out);
    let _ = out.flush();
}

const STOP_POLL: Duration = Duration::from_millis(50);

/// Waits for the next trigger. Returns the snapshot to act on (the
/// triggering step, or the latest one for timed triggers), `Some(None)` if
/// there is none yet, and `None` once the runtime is stopping.
fn wait_trigger(
    sh: &Shared,
    rx: &mpsc::Receiver<Arc<StepRecord>>,
    next_deadline: &mut Instant,
) -> Option<Option<Arc<StepRecord>>> {
    match sh.cfg.navigator.trigger {
        Trigger::Steps(_) => loop {
            if sh.stop.load(Ordering::Relaxed) {
                return None;
            }
            match rx.recv_timeout(STOP_POLL) {
                Ok(mut record) => {
                    // Collapse a backlog of triggers into the newest one.
                    while let Ok(newer) = rx.try_recv() {
                        record = newer;
                    }
                    return Some(Some(record));
                }
                Err(RecvTimeoutError::Timeout) => continue,
                Err(RecvTimeoutError::Disconnected) => return None,
            }
        },
        Trigger::Seconds(s) => {
            loop {
                if sh.stop.load(Ordering::Relaxed) {
                    return None;
                }
                let now = Instant::now();
                if now >= *next_deadline {
                    break;
                }
                thread::sleep((*next_deadline - now).min(STOP_POLL));
            }
            *next_deadline += Duration::from_secs_f64(s);
            Some(sh.latest())
        }
    }
}

/// Fires cycles; a call still pending at the next trigger is logged as a
/// skip. Each call runs on its own worker so the ticker keeps time, and a
/// panicking backend is contained and logged.
fn navigator_ticker(sh: Arc<Shared>, rx: mpsc::Receiver<Arc<StepRecord>>) {
    let nav = sh.navigator.clone().expect("ticker runs only with a navigator");
    let period = match sh.cfg.navigator.trigger {
        Trigger::Seconds(s) => Duration::from_secs_f64(s),
        Trigger::Steps(_) => Duration::ZERO,
    };
    let mut deadline = Instant::now() + period;
    while let Some(snapshot) = wait_trigger(&sh, &rx, &mut deadline) {
        if !sh.nav_enabled.load(Ordering::Relaxed) {
            continue;
        }
        let Some(snapshot) = snapshot else { continue };
        let policy = sh.policy();
        let Some(guard) = nav.try_acquire() else {
            sh.record_entry(nav.skipped(Some(snapshot.step), &policy));
            continue;
        };
        let (sh2, nav2) = (sh.clone(), nav.clone());
        let worker = thread::Builder::new().name("navigator-call".into()).spawn(move || {
            let outcome = catch_unwind(AssertUnwindSafe(|| {
                nav2.cycle_acquired(guard, &snapshot, &policy, &sh2.params)
            }));
            let entry = outcome.unwrap_or_else(|_| {
                error!("navigator cycle panicked; parameters retained");
                nav2.failed(Some(snapshot.step), &policy, "navigator cycle panicked")
            });
            sh2.record_entry(entry);
        });
        if let Err(e) = worker {
            error!("cannot spawn navigator worker: {e}");
        }
    }
}
