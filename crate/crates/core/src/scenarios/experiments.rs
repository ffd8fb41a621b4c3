//! The two reference experiments: per-policy operating points with the
//! B0/B1 baselines, and steering under an abrupt gain reversal.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{GainChange, Mode, RunReport, Scenario};
use crate::baselines::{waterfilling, WATERFILLING_LABEL};
use crate::error::{Error, Result};
use crate::llm::{ChatBackend, ScriptedStatic};
use crate::model::{Allocation, ChannelState, WeightVector, DEFAULT_P_TOTAL, REFERENCE_GAINS};
use crate::navigator::{GuardrailConfig, Policy, EQUALIZE_POLICY};
use crate::optimizer::OptimizerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyId {
    P1,
    P2,
    P3,
    P4,
    /// Optimizer only, uniform weights.
    B0,
    /// Water-filling allocation evaluated under QPSK.
    B1,
}

impl PolicyId {
    pub const ALL: [PolicyId; 6] = [Self::P1, Self::P2, Self::P3, Self::P4, Self::B0, Self::B1];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::P1 => "P1",
            Self::P2 => "P2",
            Self::P3 => "P3",
            Self::P4 => "P4",
            Self::B0 => "B0",
            Self::B1 => "B1",
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Self::B0 | Self::B1)
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid("policy id", format!("unknown policy {s:?}; expected P1..P4, B0 or B1")))
    }
}

/// Optional replacements for an experiment's reference settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n_mc: Option<usize>,
    pub steps: Option<u64>,
    pub warmup: Option<u64>,
    pub interval: Option<u64>,
    pub beta: Option<f64>,
}

fn base_scenario(label: String, policy: Policy, o: &Overrides, defaults: (usize, u64, u64, u64)) -> Scenario {
    let (n_mc, interval, steps, warmup) = defaults;
    let total_steps = o.steps.unwrap_or(steps);
    Scenario {
        label,
        channels: ChannelState::reference(),
        gain_schedule: Vec::new(),
        policy,
        interval: o.interval.unwrap_or(interval),
        total_steps,
        warmup_steps: o.warmup.unwrap_or_else(|| warmup.min(total_steps.saturating_sub(1))),
        p_total: DEFAULT_P_TOTAL,
        optimizer: OptimizerConfig {
            n_mc: o.n_mc.unwrap_or(n_mc),
            seed: o.seed.unwrap_or(1),
            ..Default::default()
        },
        guardrails: GuardrailConfig {
            beta: o.beta.unwrap_or(0.5),
            n_expected: REFERENCE_GAINS.len(),
            ..Default::default()
        },
        mode: Mode::Optimize,
    }
}

/// Reference configuration: 10^4 samples, navigator every 10 steps,
/// 250 steps of which the last 50 are measured.
pub fn policy_scenario(id: PolicyId, o: &Overrides) -> Result<Scenario> {
    let policy = match id {
        PolicyId::B0 | PolicyId::B1 => Policy::preset("P1").expect("preset exists"),
        other => Policy::preset(other.as_str()).expect("preset exists"),
    };
    let label = if id == PolicyId::B1 {
        format!("B1 {WATERFILLING_LABEL}")
    } else {
        id.to_string()
    };
    let mut sc = base_scenario(label, policy, o, (10_000, 10, 250, 200));
    if id == PolicyId::B1 {
        let wf = waterfilling(&WeightVector::uniform(sc.channels.len()), &sc.channels, sc.p_total)?;
        sc.mode = Mode::Fixed(Allocation::from_powers(&wf.powers)?);
    }
    Ok(sc)
}

/// Fixed-action backend reproducing each policy's typical weight pattern.
pub fn static_backend(id: PolicyId) -> Option<ScriptedStatic> {
    let g = REFERENCE_GAINS;
    let gsum: f64 = g.iter().sum();
    Some(match id {
        PolicyId::P1 => ScriptedStatic::new(vec![0.125; 8], None, "Uniform weights already maximize the sum rate."),
        PolicyId::P2 => ScriptedStatic::new(
            vec![0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.2, 0.5],
            None,
            "Channel 8 gets the largest weight and channel 7 the second largest; the rest keep a small share.",
        ),
        PolicyId::P3 => ScriptedStatic::new(
            g.iter().map(|x| x / gsum).collect(),
            Some(30.0),
            "Weight channels by gain and lower the budget to 30 to save power.",
        ),
        PolicyId::P4 => ScriptedStatic::new(
            vec![0.0, 0.0, 0.0, 0.2, 0.2, 0.2, 0.2, 0.2],
            None,
            "Channels 1-3 are the weakest: weight 0; the other five share the weight equally.",
        ),
        PolicyId::B0 | PolicyId::B1 => return None,
    })
}

/// Runs one policy experiment. Baselines never consult a backend; policies
/// fall back to [`static_backend`] when `backend` is `None`.
pub fn run_policy_experiment(id: PolicyId, backend: Option<Box<dyn ChatBackend>>, o: &Overrides) -> Result<RunReport> {
    let sc = policy_scenario(id, o)?;
    let backend = if id.is_baseline() {
        None
    } else {
        backend.or_else(|| static_backend(id).map(|b| Box::new(b) as Box<dyn ChatBackend>))
    };
    sc.run(backend)
}

/// Reference configuration: 3000 samples, navigator every 20 steps, 300
/// steps with every gain reversed halfway through.
pub fn resilience_scenario(o: &Overrides) -> Scenario {
    let policy = Policy::new(EQUALIZE_POLICY).expect("non-empty").with_id("EQ");
    let mut sc = base_scenario("resilience".into(), policy, o, (3000, 20, 300, 250));
    let reversal = sc.total_steps / 2;
    sc.gain_schedule = vec![GainChange {
        step: reversal,
        gains2: sc.channels.reversed_gains(),
    }];
    sc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResilienceReport {
    pub steered: RunReport,
    pub baseline: RunReport,
    pub reversal_step: u64,
}

impl ResilienceReport {
    /// Steered spread strictly below the uniform-weight baseline.
    pub fn improved(&self) -> bool {
        self.steered.metrics.final_spread < self.baseline.metrics.final_spread
    }
}

/// Runs the steered scenario and the uniform-weight baseline under the same
/// seed and gain schedule.
pub fn run_resilience(backend: Box<dyn ChatBackend>, o: &Overrides) -> Result<ResilienceReport> {
    let sc = resilience_scenario(o);
    let reversal_step = sc.gain_schedule[0].step;
    let mut steered = sc.run(Some(backend))?;
    steered.metrics.label = "resilience steered".into();
    let mut baseline = sc.run(None)?;
    baseline.metrics.label = "resilience baseline (uniform weights)".into();
    Ok(ResilienceReport {
        steered,
        baseline,
        reversal_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_ids_parse() {
        assert_eq!("b0".parse::<PolicyId>().unwrap(), PolicyId::B0);
        assert_eq!("P4".parse::<PolicyId>().unwrap(), PolicyId::P4);
        assert!("P5".parse::<PolicyId>().is_err());
    }

    #[test]
    fn reference_settings() {
        let sc = policy_scenario(PolicyId::P2, &Overrides::default()).unwrap();
        assert_eq!((sc.total_steps, sc.warmup_steps, sc.interval), (250, 200, 10));
        assert_eq!(sc.optimizer.n_mc, 10_000);
        let r = resilience_scenario(&Overrides::default());
        assert_eq!((r.total_steps, r.interval, r.optimizer.n_mc), (300, 20, 3000));
        assert_eq!(r.gain_schedule[0].step, 150);
        assert_eq!(r.gain_schedule[0].gains2[0], 2.25);
    }

    #[test]
    fn static_patterns_are_valid_json() {
        for id in [PolicyId::P1, PolicyId::P2, PolicyId::P3, PolicyId::P4] {
            let b = static_backend(id).unwrap();
            let a = crate::navigator::parse_action(b.body()).unwrap();
            assert_eq!(a.weights.len(), 8);
            let s: f64 = a.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(static_backend(PolicyId::B0).is_none());
    }
}
