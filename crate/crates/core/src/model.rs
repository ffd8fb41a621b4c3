//! Shared domain types: the channel environment, the allocation vector that
//! the optimizer owns, and the control parameters the navigator may write.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mi::NoiseModel;

/// Channel power gains used throughout the reference experiments.
pub const REFERENCE_GAINS: [f64; 8] = [0.25, 0.36, 0.49, 0.64, 0.81, 1.0, 1.44, 2.25];

/// Default operational power cap.
pub const DEFAULT_P_TOTAL: f64 = 40.0;

/// Tolerance on `sum(w) == 1`.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// The environment: per-channel power gains `|h_i|^2` and the noise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    gains2: Vec<f64>,
    noise: NoiseModel,
}

impl ChannelState {
    pub fn new(gains2: Vec<f64>, noise: NoiseModel) -> Result<Self> {
        validate_gains(&gains2)?;
        Ok(Self { gains2, noise })
    }

    /// The eight-channel reference environment with unit noise variance.
    pub fn reference() -> Self {
        Self {
            gains2: REFERENCE_GAINS.to_vec(),
            noise: NoiseModel::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.gains2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains2.is_empty()
    }

    pub fn gains2(&self) -> &[f64] {
        &self.gains2
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// Channel amplitudes `|h_i|`.
    pub fn amplitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.gains2.iter().map(|g| g.sqrt())
    }

    /// Disturbance injection. The channel count cannot change.
    pub fn set_gains(&mut self, gains2: Vec<f64>) -> Result<()> {
        if gains2.len() != self.gains2.len() {
            return Err(Error::DimensionMismatch {
                expected: self.gains2.len(),
                got: gains2.len(),
            });
        }
        validate_gains(&gains2)?;
        self.gains2 = gains2;
        Ok(())
    }

    /// Gains with channel order reversed: `|h_i|^2 <- |h_{N+1-i}|^2`.
    pub fn reversed_gains(&self) -> Vec<f64> {
        self.gains2.iter().rev().copied().collect()
    }
}

fn validate_gains(gains2: &[f64]) -> Result<()> {
    if gains2.is_empty() {
        return Err(Error::invalid("gains", "at least one channel is required"));
    }
    if let Some(g) = gains2.iter().find(|g| !g.is_finite() || **g < 0.0) {
        return Err(Error::invalid("gains", format!("gain {g} is not a finite nonnegative value")));
    }
    Ok(())
}

/// Per-channel amplitude vector `lambda`; powers are `lambda_i^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    lambda: Vec<f64>,
}

impl Allocation {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if lambda.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::invalid("allocation", "amplitudes must be finite and nonnegative"));
        }
        Ok(Self { lambda })
    }

    /// Every channel at the same amplitude.
    pub fn constant(n: usize, amplitude: f64) -> Self {
        Self {
            lambda: vec![amplitude.max(0.0); n],
        }
    }

    /// Equal power split of `p_total` over `n` channels.
    /// Equal split of `p_total`, rounded down so the total never exceeds it.
    pub fn uniform(n: usize, p_total: f64) -> Self {
        let mut a = Self::constant(n, (p_total / n as f64).sqrt());
        while a.total_power() > p_total {
            a.lambda.iter_mut().for_each(|l| *l *= 1.0 - f64::EPSILON);
        }
        a
    }

    /// Amplitudes from per-channel powers.
    pub fn from_powers(powers: &[f64]) -> Result<Self> {
        Self::new(powers.iter().map(|p| p.max(0.0).sqrt()).collect())
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub(crate) fn lambda_mut(&mut self) -> &mut [f64] {
        &mut self.lambda
    }

    pub fn powers(&self) -> Vec<f64> {
        self.lambda.iter().map(|l| l * l).collect()
    }

    pub fn total_power(&self) -> f64 {
        self.lambda.iter().map(|l| l * l).sum()
    }
}

/// Nonnegative channel priorities on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// Accepts a vector that already lies on the simplex.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid("weights", "empty weight vector"));
        }
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::invalid("weights", "entries must be finite and nonnegative"));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid("weights", format!("entries sum to {sum}, not 1")));
        }
        Ok(Self(w))
    }

    /// Indicator on channel `k`.
    pub fn one_hot(n: usize, k: usize) -> Self {
        let mut w = vec![0.0; n];
        w[k] = 1.0;
        Self(w)
    }

    /// Rescales a nonnegative vector with positive sum onto the simplex.
    pub(crate) fn normalized(mut w: Vec<f64>) -> Option<Self> {
        let sum: f64 = w.iter().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return None;
        }
        w.iter_mut().for_each(|x| *x /= sum);
        Some(Self(w))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Index of the largest weight (first one on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, w) in self.0.iter().enumerate() {
            if *w > self.0[best] {
                best = i;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        Self::new(w)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

/// The only surface the navigator may write: channel weights and the
/// operational power cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub weights: WeightVector,
    pub p_total: f64,
}

impl ControlParams {
    pub fn new(weights: WeightVector, p_total: f64) -> Result<Self> {
        if !(p_total.is_finite() && p_total > 0.0) {
            return Err(Error::invalid("p_total", format!("{p_total} is not a positive finite budget")));
        }
        Ok(Self { weights, p_total })
    }

    pub fn uniform(n: usize, p_total: f64) -> Self {
        Self {
            weights: WeightVector::uniform(n),
            p_total,
        }
    }

    /// Checks the simplex and budget-range invariants.
    pub fn satisfies(&self, p_min: f64, p_max: f64) -> bool {
        let w = self.weights.as_slice();
        let sum: f64 = w.iter().sum();
        w.iter().all(|x| x.is_finite() && *x >= 0.0)
            && (sum - 1.0).abs() <= SIMPLEX_TOL
            && self.p_total >= p_min
            && self.p_total <= p_max
    }
}
