//! Weighted water-filling: the Gaussian-input closed form, used as a
//! reference point rather than as a discrete-input benchmark.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChannelState, WeightVector};

/// Label attached to water-filling results in reports.
pub const WATERFILLING_LABEL: &str = "water-filling (Gaussian-input reference, not a discrete-input benchmark)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfillingSolution {
    pub powers: Vec<f64>,
    /// Water-level multiplier.
    pub nu: f64,
    pub achieved_sum: f64,
}

/// Relative tolerance on `sum P_i == p_total`.
pub const WATERFILLING_TOL: f64 = 1e-8;

fn powers_at(nu: f64, w: &[f64], gains2: &[f64], sigma2: f64) -> Vec<f64> {
    w.iter()
        .zip(gains2)
        .map(|(wi, g)| {
            if *wi > 0.0 && *g > 0.0 {
                (wi / (nu * LN_2) - sigma2 / g).max(0.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// `P_i = [w_i / (nu ln 2) - sigma^2 / |h_i|^2]_+` with `nu` found by
/// bisection so the powers sum to `p_total`.
pub fn waterfilling(w: &WeightVector, channels: &ChannelState, p_total: f64) -> Result<WaterfillingSolution> {
    let gains2 = channels.gains2();
    if w.len() != gains2.len() {
        return Err(Error::DimensionMismatch {
            expected: gains2.len(),
            got: w.len(),
        });
    }
    if !(p_total.is_finite() && p_total > 0.0) {
        return Err(Error::invalid("p_total", format!("{p_total} must be positive")));
    }
    let w = w.as_slice();
    if !w.iter().zip(gains2).any(|(wi, g)| wi * g > 0.0) {
        return Err(Error::NoWaterLevel);
    }
    let sigma2 = channels.noise().sigma2();
    let total = |nu: f64| powers_at(nu, w, gains2, sigma2).iter().sum::<f64>();

    // The total is decreasing in nu; grow the bracket until it straddles p_total.
    // Bisection stops on the feasible side so the result never exceeds the budget.
    let (mut lo, mut hi) = (1.0, 1.0);
    while total(lo) < p_total {
        lo *= 0.5;
    }
    while total(hi) > p_total {
        hi *= 2.0;
    }
    let mut nu = 0.5 * (lo + hi);
    for _ in 0..2000 {
        nu = 0.5 * (lo + hi);
        let s = total(nu);
        if s <= p_total && p_total - s <= WATERFILLING_TOL * p_total {
            break;
        }
        if s > p_total {
            lo = nu;
        } else {
            hi = nu;
        }
    }
    let powers = powers_at(nu, w, gains2, sigma2);
    let achieved_sum = powers.iter().sum();
    Ok(WaterfillingSolution {
        powers,
        nu,
        achieved_sum,
    })
}

/// Weighted Gaussian-input rate `sum_i w_i log2(1 + |h_i|^2 P_i / sigma^2)`.
pub fn gaussian_rate(w: &[f64], channels: &ChannelState, powers: &[f64]) -> f64 {
    let sigma2 = channels.noise().sigma2();
    w.iter()
        .zip(channels.gains2())
        .zip(powers)
        .map(|((wi, g), p)| wi * (1.0 + g * p / sigma2).log2())
        .sum()
}
