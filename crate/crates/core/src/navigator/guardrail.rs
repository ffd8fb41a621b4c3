//! Post-processing applied to every proposed action before it can reach the
//! optimizer: clip and normalize the weights, clamp the budget, then smooth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ControlParams, WeightVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuardrailConfig {
    /// EMA coefficient; 1 applies proposals immediately.
    pub beta: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub n_expected: usize,
}

impl Default for GuardrailConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            p_min: 1.0,
            p_max: 100.0,
            n_expected: 8,
        }
    }
}

impl GuardrailConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::invalid("beta", format!("{} is outside (0, 1]", self.beta)));
        }
        if !(self.p_min.is_finite() && self.p_max.is_finite() && self.p_min > 0.0 && self.p_min <= self.p_max) {
            return Err(Error::invalid(
                "budget range",
                format!("[{}, {}] is not a valid positive range", self.p_min, self.p_max),
            ));
        }
        if self.n_expected == 0 {
            return Err(Error::invalid("n_expected", "must be at least 1"));
        }
        Ok(())
    }
}

/// Outcome of [`sanitize_weights`] when the length is right.
#[derive(Debug, Clone, PartialEq)]
pub struct SanitizedWeights {
    pub weights: WeightVector,
    /// Some entries were negative (or NaN) and were clipped to zero.
    pub clipped: bool,
    /// Nothing usable was left, so the uniform vector was substituted.
    pub uniform_fallback: bool,
}

/// Wrong-length proposal: the previous parameters must be retained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimensionMismatch {
    pub expected: usize,
    pub got: usize,
}

/// Clips negatives to zero and normalizes onto the simplex. An all-zero or
/// non-finite vector becomes uniform.
pub fn sanitize_weights(raw: &[f64], n_expected: usize) -> std::result::Result<SanitizedWeights, DimensionMismatch> {
    if raw.len() != n_expected {
        return Err(DimensionMismatch {
            expected: n_expected,
            got: raw.len(),
        });
    }
    let mut clipped = false;
    let mut w: Vec<f64> = raw
        .iter()
        .map(|&x| {
            // NaN fails the comparison and is clipped with the negatives.
            if x >= 0.0 {
                x
            } else {
                clipped = true;
                0.0
            }
        })
        .collect();
    let uniform = || SanitizedWeights {
        weights: WeightVector::uniform(n_expected),
        clipped,
        uniform_fallback: true,
    };
    if w.iter().any(|x| x.is_infinite()) {
        return Ok(uniform());
    }
    // Scale by the largest entry first so huge finite entries cannot
    // overflow the sum.
    let max = w.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(uniform());
    }
    w.iter_mut().for_each(|x| *x /= max);
    Ok(match WeightVector::normalized(w) {
        Some(weights) => SanitizedWeights {
            weights,
            clipped,
            uniform_fallback: false,
        },
        None => uniform(),
    })
}

/// Clamps a proposed budget into `[p_min, p_max]`; an absent or non-finite
/// proposal keeps `current`.
pub fn clamp_budget(raw: Option<f64>, current: f64, cfg: &GuardrailConfig) -> f64 {
    match raw {
        Some(p) if p.is_finite() => p.clamp(cfg.p_min, cfg.p_max),
        _ => current,
    }
}

/// `w <- (1 - beta) w + beta w_hat` (renormalized) and the same update for
/// the budget.
pub fn apply_ema(current: &ControlParams, proposed: (&WeightVector, f64), beta: f64) -> ControlParams {
    let (w_hat, p_hat) = proposed;
    let blended: Vec<f64> = current
        .weights
        .as_slice()
        .iter()
        .zip(w_hat.as_slice())
        .map(|(w, h)| (1.0 - beta) * w + beta * h)
        .collect();
    let weights = WeightVector::normalized(blended).unwrap_or_else(|| w_hat.clone());
    let p = current.p_total;
    // The convex combination can land an ulp outside its endpoints.
    let p_total = ((1.0 - beta) * p + beta * p_hat).clamp(p.min(p_hat), p.max(p_hat));
    ControlParams { weights, p_total }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sanitize(raw: &[f64]) -> SanitizedWeights {
        sanitize_weights(raw, raw.len()).unwrap()
    }

    #[test]
    fn clip_and_normalize() {
        let s = sanitize(&[-1.0, 3.0]);
        assert_eq!(s.weights.as_slice(), &[0.0, 1.0]);
        assert!(s.clipped && !s.uniform_fallback);
        assert_eq!(sanitize(&[1.0; 4]).weights.as_slice(), &[0.25; 4]);
    }

    #[test]
    fn all_zero_is_uniform() {
        let s = sanitize(&[0.0; 8]);
        assert_eq!(s.weights.as_slice(), &[0.125; 8]);
        assert!(s.uniform_fallback);
    }

    #[test]
    fn shutdown_pattern_passes_through() {
        let raw = [0.0, 0.0, 0.0, 0.2, 0.2, 0.2, 0.2, 0.2];
        let s = sanitize(&raw);
        for (a, b) in s.weights.as_slice().iter().zip(raw) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(!s.clipped && !s.uniform_fallback);
    }

    #[test]
    fn non_finite_entries() {
        let s = sanitize(&[f64::NAN, 1.0]);
        assert_eq!(s.weights.as_slice(), &[0.0, 1.0]);
        assert!(s.clipped);
        assert!(sanitize(&[f64::INFINITY, 1.0]).uniform_fallback);
        let s = sanitize(&[f64::NEG_INFINITY, 1.0]);
        assert_eq!(s.weights.as_slice(), &[0.0, 1.0]);
        let huge = sanitize(&[1e308; 8]);
        assert_eq!(huge.weights.as_slice(), &[0.125; 8]);
    }

    #[test]
    fn wrong_length() {
        assert_eq!(
            sanitize_weights(&[0.5, 0.5], 8),
            Err(DimensionMismatch { expected: 8, got: 2 })
        );
    }

    #[test]
    fn budget_clamp() {
        let cfg = GuardrailConfig::default();
        assert_eq!(clamp_budget(None, 40.0, &cfg), 40.0);
        assert_eq!(clamp_budget(Some(30.0), 40.0, &cfg), 30.0);
        assert_eq!(clamp_budget(Some(1e6), 40.0, &cfg), 100.0);
        assert_eq!(clamp_budget(Some(-5.0), 40.0, &cfg), 1.0);
        assert_eq!(clamp_budget(Some(f64::NAN), 40.0, &cfg), 40.0);
    }

    #[test]
    fn ema_examples() {
        let cur = ControlParams::new(WeightVector::new(vec![1.0, 0.0]).unwrap(), 40.0).unwrap();
        let hat = WeightVector::new(vec![0.0, 1.0]).unwrap();
        let half = apply_ema(&cur, (&hat, 30.0), 0.5);
        assert_eq!(half.weights.as_slice(), &[0.5, 0.5]);
        assert_eq!(half.p_total, 35.0);
        let full = apply_ema(&cur, (&hat, 30.0), 1.0);
        assert_eq!(full.weights, hat);
        assert_eq!(full.p_total, 30.0);
    }

    #[test]
    fn config_validation() {
        assert!(GuardrailConfig::default().validate().is_ok());
        assert!(GuardrailConfig { beta: 0.0, ..Default::default() }.validate().is_err());
        assert!(GuardrailConfig { beta: 1.5, ..Default::default() }.validate().is_err());
        assert!(GuardrailConfig { p_min: 50.0, p_max: 10.0, ..Default::default() }.validate().is_err());
    }
}
