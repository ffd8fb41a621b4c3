//! Runtime configuration: one TOML file, validated on load, with
//! command-line overrides applied on top.

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use dualloop_core::llm::EndpointConfig;
use dualloop_core::mi::NoiseModel;
use dualloop_core::model::{ChannelState, DEFAULT_P_TOTAL, REFERENCE_GAINS};
use dualloop_core::navigator::{GuardrailConfig, Policy};
use dualloop_core::optimizer::OptimizerConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid TOML: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// When the navigator fires.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// Every `n` optimizer steps.
    Steps(u64),
    /// Every `s` seconds of wall time.
    Seconds(f64),
}

impl Default for Trigger {
    fn default() -> Self {
        Trigger::Seconds(2.0)
    }
}

impl FromStr for Trigger {
    type Err = ConfigError;

    /// `"10"` or `"10steps"` for a step trigger, `"2s"` for a timed one.
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let s = s.trim();
        let bad = || invalid(format!("trigger {s:?}: expected e.g. \"10\", \"10steps\" or \"2s\""));
        if let Some(secs) = s.strip_suffix('s').filter(|r| !r.ends_with("step")) {
            return secs.trim().parse().map(Trigger::Seconds).map_err(|_| bad());
        }
        s.trim_end_matches("steps")
            .trim()
            .parse()
            .map(Trigger::Steps)
            .map_err(|_| bad())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    /// Channel count; must equal `gains.len()` when given.
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub gains: Vec<f64>,
    pub sigma2: f64,
    pub p_total: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            n: None,
            gains: REFERENCE_GAINS.to_vec(),
            sigma2: 1.0,
            p_total: DEFAULT_P_TOTAL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavigatorSection {
    pub enabled: bool,
    pub trigger: Trigger,
    pub policy: String,
    /// Replaces the built-in system prompt when set.
    pub system_prompt_file: Option<PathBuf>,
}

impl Default for NavigatorSection {
    fn default() -> Self {
        Self {
            enabled: true,
            trigger: Trigger::default(),
            policy: Policy::preset("P1").expect("preset exists").text().to_string(),
            system_prompt_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
// serde cannot combine `deny_unknown_fields` with `flatten`.
#[serde(default)]
pub struct LlmSection {
    pub backend: BackendSpec,
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
}

impl Default for LlmSection {
    fn default() -> Self {
        Self {
            backend: BackendSpec::None,
            endpoint: EndpointConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TelemetrySection {
    /// JSONL file receiving every optimizer step.
    pub path: Option<PathBuf>,
    /// JSONL file receiving every navigator log entry.
    pub navigator_log: Option<PathBuf>,
    /// Stream every n-th step to `/api/stream`.
    pub decimation: u64,
    pub queue_capacity: usize,
    /// Navigator entries kept in memory for `/api/llm-log`.
    pub log_capacity: usize,
}

impl Default for TelemetrySection {
    fn default() -> Self {
        Self {
            path: None,
            navigator_log: None,
            decimation: 5,
            queue_capacity: 4096,
            log_capacity: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub bind: String,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    pub system: SystemSection,
    pub optimizer: OptimizerConfig,
    pub guardrails: GuardrailConfig,
    pub navigator: NavigatorSection,
    pub llm: LlmSection,
    pub telemetry: TelemetrySection,
    pub server: ServerSection,
    /// Optimizer steps per second; 0 runs unthrottled.
    pub pacing: f64,
}

impl RuntimeConfig {
    /// Parses and validates a TOML document. `guardrails.n_expected` is
    /// derived from the gain vector and need not be given.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: RuntimeConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.guardrails.n_expected = cfg.system.gains.len();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.system.gains.len();
        if n == 0 {
            return Err(invalid("system.gains is empty"));
        }
        if let Some(declared) = self.system.n {
            if declared != n {
                return Err(invalid(format!("system.N = {declared} but {n} gains given")));
            }
        }
        self.channels()?;
        if self.guardrails.n_expected != n {
            return Err(invalid(format!(
                "guardrails.n_expected = {} but {n} gains given",
                self.guardrails.n_expected
            )));
        }
        self.guardrails.validate().map_err(|e| invalid(e.to_string()))?;
        let p = self.system.p_total;
        if !(p >= self.guardrails.p_min && p <= self.guardrails.p_max) {
            return Err(invalid(format!(
                "system.p_total = {p} outside [{}, {}]",
                self.guardrails.p_min, self.guardrails.p_max
            )));
        }
        self.optimizer
            .validate(n, self.guardrails.p_min)
            .map_err(|e| invalid(e.to_string()))?;
        match self.navigator.trigger {
            Trigger::Steps(0) => return Err(invalid("navigator.trigger steps must be at least 1")),
            Trigger::Seconds(s) if !(s.is_finite() && s > 0.0) => {
                return Err(invalid("navigator.trigger seconds must be positive"))
            }
            _ => {}
        }
        Policy::new(self.navigator.policy.clone()).map_err(|e| invalid(e.to_string()))?;
        self.llm.endpoint.validate().map_err(invalid)?;
        if self.telemetry.decimation == 0 {
            return Err(invalid("telemetry.decimation must be at least 1"));
        }
        if self.telemetry.queue_capacity == 0 || self.telemetry.log_capacity == 0 {
            return Err(invalid("telemetry capacities must be positive"));
        }
        if !(self.pacing.is_finite() && self.pacing >= 0.0) {
            return Err(invalid("pacing must be a nonnegative steps-per-second rate"));
        }
        Ok(())
    }

    pub fn channels(&self) -> Result<ChannelState, ConfigError> {
        let noise = NoiseModel::new(self.system.sigma2).map_err(|e| invalid(e.to_string()))?;
        ChannelState::new(self.system.gains.clone(), noise).map_err(|e| invalid(e.to_string()))
    }

    /// Minimum wall time per step, if throttled.
    pub fn step_period(&self) -> Option<Duration> {
        (self.pacing > 0.0).then(|| Duration::from_secs_f64(1.0 / self.pacing))
    }
}
