//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use dualloop_core::llm::ChatBackend;
use dualloop_core::mi::{mi_estimate_full, mi_exact, Constellation, EffectiveAmplitude, NoiseModel, SampleSet};
use dualloop_core::scenarios::{
    export_report, policy_scenario, resilience_scenario, run_policy_experiment, static_backend, ExportFormat,
    MetricsReport, Overrides, PolicyId, RunReport,
};
use tracing::{error, info};

use crate::api;
use crate::backend::{build_backend, BackendSpec};
use crate::config::{RuntimeConfig, Trigger};
use crate::runtime::Runtime;

#[derive(Debug, Parser)]
#[command(name = "dualloop", version, about = "Dual-loop QPSK power allocation with language-model steering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the live service (optimizer, navigator and HTTP API).
    Run(RunArgs),
    /// Run a scripted experiment and print its metrics.
    #[command(subcommand)]
    Experiment(Experiment),
    /// Numerical reference values.
    #[command(subcommand)]
    Oracle(Oracle),
    /// Parse and validate a configuration file.
    ValidateConfig {
        path: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum Experiment {
    /// One policy (P1..P4) or baseline (B0, B1) at the reference settings.
    Policy {
        #[arg(long)]
        id: PolicyId,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Gain reversal halfway through, steered run against the uniform-weight baseline.
    Resilience {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum Oracle {
    /// Quadrature and Monte Carlo MI of one QPSK channel.
    Mi {
        /// Effective amplitude |h| lambda.
        #[arg(long, allow_hyphen_values = true)]
        a: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
        #[arg(long, default_value_t = 100_000)]
        nmc: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub nmc: Option<usize>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Navigator interval in optimizer steps.
    #[arg(long)]
    pub interval: Option<u64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// live | equalizer | static:<file> | fuzz | none
    #[arg(long)]
    pub backend: Option<BackendSpec>,
    #[arg(long)]
    pub llm_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Trajectory output (.csv or .jsonl); for `run`, the telemetry log.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Navigator trigger: `10` / `10steps` or `2s`.
    #[arg(long)]
    pub trigger: Option<Trigger>,
    #[arg(long)]
    pub bind: Option<String>,
    /// Optimizer steps per second, 0 for unthrottled.
    #[arg(long)]
    pub pacing: Option<f64>,
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub navigator_log: Option<PathBuf>,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

/// Parses `args` and runs the command, writing reports to `out`.
pub fn main_with<I, T>(args: I, out: &mut dyn Write) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command, out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(msg) | Failure::Runtime(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match cmd {
        Command::Run(args) => run_service(args),
        Command::Experiment(Experiment::Policy { id, common }) => experiment_policy(id, &common, out),
        Command::Experiment(Experiment::Resilience { common }) => experiment_resilience(&common, out),
        Command::Oracle(Oracle::Mi { a, sigma2, nmc, seed }) => oracle_mi(a, sigma2, nmc, seed, out),
        Command::ValidateConfig { path } => {
            let cfg = RuntimeConfig::load(&path).map_err(|e| Failure::Config(e.to_string()))?;
            writeln!(
                out,
                "{}: ok ({} channels, backend {})",
                path.display(),
                cfg.system.gains.len(),
                cfg.llm.backend
            )
            .map_err(io_failure)
        }
    }
}

fn io_failure(e: std::io::Error) -> Failure {
    Failure::Runtime(format!("write failed: {e}"))
}

fn overrides(c: &CommonArgs) -> Overrides {
    Overrides {
        seed: c.seed,
        n_mc: c.nmc,
        steps: c.steps,
        warmup: None,
        interval: c.interval,
        beta: c.beta,
    }
}

fn endpoint(c: &CommonArgs) -> dualloop_core::llm::EndpointConfig {
    let mut e = dualloop_core::llm::EndpointConfig::default();
    if let Some(url) = &c.llm_url {
        e.base_url = url.clone();
    }
    if let Some(m) = &c.model {
        e.model = m.clone();
    }
    e
}

fn backend_for(spec: &BackendSpec, c: &CommonArgs, n: usize) -> Result<Option<Box<dyn ChatBackend>>, Failure> {
    build_backend(spec, &endpoint(c), n, c.seed.unwrap_or(1)).map_err(Failure::Config)
}

fn write_metrics(m: &MetricsReport, out: &mut dyn Write) -> std::io::Result<()> {
    let fmt = |v: &[f64], p: usize| v.iter().map(|x| format!("{x:.p$}")).collect::<Vec<_>>().join(" ");
    writeln!(out, "[{}]", m.label)?;
    writeln!(out, "  steps                 {}", m.steps)?;
    writeln!(out, "  mean sum MI (window)  {:.4} bits", m.mean_sum_mi)?;
    writeln!(out, "  final MI              {}", fmt(&m.final_mi, 4))?;
    writeln!(out, "  final spread          {:.4} bits", m.final_spread)?;
    writeln!(out, "  final weights         {}", fmt(&m.final_weights, 4))?;
    writeln!(out, "  final P_total         {:.4}", m.final_p_total)?;
    writeln!(out, "  constraint violations {}", m.constraint_violations)
}

fn export(report: &RunReport, path: &Path) -> Result<(), Failure> {
    let file = std::fs::File::create(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    export_report(report, ExportFormat::from_path(path), &mut w).map_err(|e| Failure::Runtime(e.to_string()))?;
    w.flush().map_err(io_failure)
}

/// `results.csv` -> `results.<tag>.csv`.
fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}.{tag}.{ext}"),
        None => format!("{stem}.{tag}"),
    };
    path.with_file_name(name)
}

fn experiment_policy(id: PolicyId, c: &CommonArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let o = overrides(c);
    let report = match &c.backend {
        _ if id.is_baseline() => run_policy_experiment(id, None, &o),
        None => run_policy_experiment(id, None, &o),
        Some(spec) => {
            let sc = policy_scenario(id, &o).map_err(|e| Failure::Config(e.to_string()))?;
            let backend = backend_for(spec, c, sc.channels.len())?;
            sc.run(backend)
        }
    }
    .map_err(|e| Failure::Config(e.to_string()))?;
    let backend = match &c.backend {
        _ if id.is_baseline() => "none".to_string(),
        None => static_backend(id).map_or("none".into(), |_| "static (reference pattern)".into()),
        Some(spec) => spec.to_string(),
    };
    writeln!(out, "experiment policy {id} (backend {backend})").map_err(io_failure)?;
    write_metrics(&report.metrics, out).map_err(io_failure)?;
    if let Some(path) = &c.out {
        export(&report, path)?;
    }
    Ok(())
}

fn experiment_resilience(c: &CommonArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let o = overrides(c);
    let spec = c.backend.clone().unwrap_or(BackendSpec::Equalizer);
    let sc = resilience_scenario(&o);
    let backend = backend_for(&spec, c, sc.channels.len())?;
    let reversal = sc.gain_schedule.first().map_or(0, |g| g.step);
    let mut steered = sc.run(backend).map_err(|e| Failure::Config(e.to_string()))?;
    steered.metrics.label = format!("resilience steered ({spec})");
    let mut baseline = sc.run(None).map_err(|e| Failure::Config(e.to_string()))?;
    baseline.metrics.label = "resilience baseline (uniform weights)".into();

    let (ds, db) = (steered.metrics.final_spread, baseline.metrics.final_spread);
    writeln!(out, "experiment resilience (gains reversed at step {reversal})").map_err(io_failure)?;
    write_metrics(&steered.metrics, out).map_err(io_failure)?;
    write_metrics(&baseline.metrics, out).map_err(io_failure)?;
    writeln!(out, "delta steered  = {ds:.4} bits").map_err(io_failure)?;
    writeln!(out, "delta baseline = {db:.4} bits").map_err(io_failure)?;
    let verdict = if ds < db { "PASS" } else { "FAIL" };
    writeln!(out, "steered < baseline: {verdict}").map_err(io_failure)?;
    if let Some(path) = &c.out {
        export(&steered, path)?;
        export(&baseline, &sibling(path, "baseline"))?;
    }
    Ok(())
}

fn oracle_mi(a: f64, sigma2: f64, nmc: usize, seed: u64, out: &mut dyn Write) -> Result<(), Failure> {
    let amp = EffectiveAmplitude::new(a).map_err(|e| Failure::Config(e.to_string()))?;
    let noise = NoiseModel::new(sigma2).map_err(|e| Failure::Config(e.to_string()))?;
    let samples = SampleSet::draw(nmc, seed, 0).map_err(|e| Failure::Config(e.to_string()))?;
    let c = Constellation::qpsk();
    // `+ 0.0` folds a negative zero into `0`.
    let exact = mi_exact(amp, &c, &noise) + 0.0;
    let est = mi_estimate_full(amp, &c, &noise, &samples);
    writeln!(out, "a = {a}, sigma^2 = {sigma2}").map_err(io_failure)?;
    writeln!(out, "quadrature  = {exact} bits").map_err(io_failure)?;
    writeln!(
        out,
        "monte carlo = {} bits (N_mc = {nmc}, std error {})",
        est.bits + 0.0, est.std_error
    )
    .map_err(io_failure)
}

/// Applies command-line overrides on top of a loaded configuration.
pub fn apply_run_overrides(cfg: &mut RuntimeConfig, args: &RunArgs) {
    let c = &args.common;
    if let Some(s) = c.seed {
        cfg.optimizer.seed = s;
    }
    if let Some(n) = c.nmc {
        cfg.optimizer.n_mc = n;
    }
    if let Some(k) = c.interval {
        cfg.navigator.trigger = Trigger::Steps(k);
    }
    if let Some(t) = args.trigger {
        cfg.navigator.trigger = t;
    }
    if let Some(b) = c.beta {
        cfg.guardrails.beta = b;
    }
    if let Some(b) = &c.backend {
        cfg.llm.backend = b.clone();
    }
    if let Some(u) = &c.llm_url {
        cfg.llm.endpoint.base_url = u.clone();
    }
    if let Some(m) = &c.model {
        cfg.llm.endpoint.model = m.clone();
    }
    if let Some(o) = &c.out {
        cfg.telemetry.path = Some(o.clone());
    }
    if let Some(p) = &args.navigator_log {
        cfg.telemetry.navigator_log = Some(p.clone());
    }
    if let Some(b) = &args.bind {
        cfg.server.bind = b.clone();
    }
    if let Some(p) = args.pacing {
        cfg.pacing = p;
    }
    if let Some(p) = &args.policy {
        cfg.navigator.policy = p.clone();
    }
}

fn run_service(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => RuntimeConfig::load(path).map_err(|e| Failure::Config(e.to_string()))?,
        None => RuntimeConfig::from_toml_str("").expect("defaults are valid"),
    };
    apply_run_overrides(&mut cfg, &args);
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let backend = build_backend(&cfg.llm.backend, &cfg.llm.endpoint, cfg.system.gains.len(), cfg.optimizer.seed)
        .map_err(Failure::Config)?;
    let bind = cfg.server.bind.clone();
    let max_steps = args.common.steps;

    let rt = Arc::new(Runtime::start(cfg, backend).map_err(|e| Failure::Config(e.to_string()))?);
    let tokio_rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let served = tokio_rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .map_err(|e| Failure::Runtime(format!("cannot bind {bind}: {e}")))?;
        info!("serving on http://{}", listener.local_addr().map_err(|e| Failure::Runtime(e.to_string()))?);
        let watched = rt.clone();
        let shutdown = async move {
            let done = async {
                loop {
                    if max_steps.is_some_and(|m| watched.counters().steps >= m) {
                        return;
                    }
                    tokio::time::sleep(Duration::from_millis(50)).await;
                }
            };
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = done => {}
            }
        };
        axum::serve(listener, api::router(rt.clone()))
            .with_graceful_shutdown(shutdown)
            .await
            .map_err(|e| Failure::Runtime(e.to_string()))
    });
    // Dropping the async runtime first: the live HTTP client must not be
    // torn down from inside it.
    drop(tokio_rt);
    match Arc::try_unwrap(rt) {
        Ok(rt) => {
            rt.shutdown();
        }
        Err(_) => error!("runtime still referenced at exit; threads left running"),
    }
    served
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_names() {
        assert_eq!(sibling(Path::new("/t/r.csv"), "baseline"), PathBuf::from("/t/r.baseline.csv"));
        assert_eq!(sibling(Path::new("r"), "baseline"), PathBuf::from("r.baseline"));
    }

    #[test]
    fn run_overrides_apply() {
        let args = RunArgs::try_parse_from_args(&["--interval", "20", "--beta", "0.3", "--backend", "equalizer"]);
        let mut cfg = RuntimeConfig::default();
        apply_run_overrides(&mut cfg, &args);
        assert_eq!(cfg.navigator.trigger, Trigger::Steps(20));
        assert_eq!(cfg.guardrails.beta, 0.3);
        assert_eq!(cfg.llm.backend, BackendSpec::Equalizer);
    }

    impl RunArgs {
        fn try_parse_from_args(extra: &[&str]) -> RunArgs {
            let mut argv = vec!["dualloop", "run"];
            argv.extend_from_slice(extra);
            match Cli::try_parse_from(argv).unwrap().command {
                Command::Run(a) => a,
                _ => unreachable!(),
            }
        }
    }
}
