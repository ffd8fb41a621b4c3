//! Mutual information of a finite-constellation AWGN channel.
//!
//! The estimator draws standard-normal noise vectors once and reuses them
//! (common random numbers), so an estimate and its analytic derivative are
//! exactly consistent and repeated calls are bit-identical.

mod quadrature;

pub use quadrature::{gauss_hermite, mi_exact, mi_exact_with_nodes, DEFAULT_QUADRATURE_NODES};

use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Allocation, ChannelState, WeightVector};

/// A constellation in real-pair form with its precomputed difference table
/// `diff(k, j) = s_k - s_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<[f64; 2]>,
    diffs: Vec<[f64; 2]>,
    diff_norm2: Vec<f64>,
}

impl Constellation {
    /// Unit-energy QPSK, `(±1 ± j)/√2`.
    pub fn qpsk() -> Self {
        let s = FRAC_1_SQRT_2;
        Self::new(vec![[s, s], [s, -s], [-s, s], [-s, -s]]).expect("QPSK is a valid constellation")
    }

    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("constellation", "needs at least two points"));
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("constellation"));
        }
        let m = points.len();
        let mut diffs = Vec::with_capacity(m * m);
        for k in &points {
            for j in &points {
                diffs.push([k[0] - j[0], k[1] - j[1]]);
            }
        }
        let diff_norm2 = diffs.iter().map(|d| d[0] * d[0] + d[1] * d[1]).collect();
        Ok(Self {
            points,
            diffs,
            diff_norm2,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn diff(&self, k: usize, j: usize) -> [f64; 2] {
        self.diffs[k * self.len() + j]
    }

    /// `log2 M`, the saturation ceiling of the mutual information.
    pub fn max_bits(&self) -> f64 {
        (self.len() as f64).log2()
    }
}

impl Default for Constellation {
    fn default() -> Self {
        Self::qpsk()
    }
}

/// Complex noise variance `sigma2`; each real component has variance
/// `t = sigma2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct NoiseModel {
    sigma2: f64,
}

impl NoiseModel {
    pub fn new(sigma2: f64) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::invalid("sigma2", format!("{sigma2} must be positive and finite")));
        }
        Ok(Self { sigma2 })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn t(&self) -> f64 {
        self.sigma2 / 2.0
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { sigma2: 1.0 }
    }
}

impl TryFrom<f64> for NoiseModel {
    type Error = Error;

    fn try_from(sigma2: f64) -> Result<Self> {
        Self::new(sigma2)
    }
}

impl From<NoiseModel> for f64 {
    fn from(n: NoiseModel) -> f64 {
        n.sigma2
    }
}

/// Two-dimensional standard-normal draws shared by every evaluation that
/// should see the same noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    samples: Vec<[f64; 2]>,
    seed: u64,
    stream: u64,
}

impl SampleSet {
    /// Draws `n_mc` samples from stream `stream` of the generator keyed by
    /// `seed`. Distinct streams are independent.
    pub fn draw(n_mc: usize, seed: u64, stream: u64) -> Result<Self> {
        if n_mc == 0 {
            return Err(Error::invalid("n_mc", "sample count must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let samples = (0..n_mc)
            .map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();
        Ok(Self {
            samples,
            seed,
            stream,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[[f64; 2]] {
        &self.samples
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }
}

/// Draws `n_mc` samples from stream 0 of `seed`.
pub fn draw_samples(n_mc: usize, seed: u64) -> Result<SampleSet> {
    SampleSet::draw(n_mc, seed, 0)
}

/// Effective channel amplitude `a = |h| * lambda`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct EffectiveAmplitude(f64);

impl EffectiveAmplitude {
    pub fn new(a: f64) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::NonFinite("effective amplitude"));
        }
        if a < 0.0 {
            return Err(Error::invalid("effective amplitude", format!("{a} is negative")));
        }
        Ok(Self(a))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Result of one pass of the Monte Carlo kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiEstimate {
    /// Estimated mutual information in bits.
    pub bits: f64,
    /// Derivative of `bits` with respect to the effective amplitude.
    pub gradient: f64,
    /// Empirical standard error of `bits` across samples.
    pub std_error: f64,
}

/// Monte Carlo mutual information in bits.
pub fn mi_estimate(a: EffectiveAmplitude, c: &Constellation, noise: &NoiseModel, s: &SampleSet) -> f64 {
    kernel(a.get(), c, noise, s).bits
}

/// Exact derivative of [`mi_estimate`] with respect to `a` on the same samples.
pub fn mi_gradient(a: EffectiveAmplitude, c: &Constellation, noise: &NoiseModel, s: &SampleSet) -> f64 {
    kernel(a.get(), c, noise, s).gradient
}

/// Estimate, derivative and standard error from a single pass.
pub fn mi_estimate_full(a: EffectiveAmplitude, c: &Constellation, noise: &NoiseModel, s: &SampleSet) -> MiEstimate {
    kernel(a.get(), c, noise, s)
}

// Accumulates in nats. Each per-sample term is `lse_k - ln M`, which is exactly
// zero at a = 0, so the zero-amplitude estimate is exactly zero.
fn kernel(a: f64, c: &Constellation, noise: &NoiseModel, s: &SampleSet) -> MiEstimate {
    let m = c.len();
    let t = noise.t();
    let inv_sqrt_t = 1.0 / t.sqrt();
    let ln_m = (m as f64).ln();
    let quad: Vec<f64> = c.diff_norm2.iter().map(|d2| a * a * d2 / (2.0 * t)).collect();
    let dquad: Vec<f64> = c.diff_norm2.iter().map(|d2| a * d2 / t).collect();

    let mut psi = vec![0.0; m];
    let mut dpsi = vec![0.0; m];
    let mut sum_v = 0.0;
    let mut sum_v2 = 0.0;
    let mut sum_g = 0.0;

    for z in &s.samples {
        let mut v = 0.0;
        for k in 0..m {
            let row = k * m;
            let mut max = f64::NEG_INFINITY;
            for j in 0..m {
                let d = c.diffs[row + j];
                let proj = (d[0] * z[0] + d[1] * z[1]) * inv_sqrt_t;
                psi[j] = -quad[row + j] - a * proj;
                dpsi[j] = -dquad[row + j] - proj;
                max = max.max(psi[j]);
            }
            let mut denom = 0.0;
            let mut numer = 0.0;
            for j in 0..m {
                let e = (psi[j] - max).exp();
                denom += e;
                numer += e * dpsi[j];
            }
            v += max + denom.ln() - ln_m;
            sum_g += numer / denom;
        }
        v /= m as f64;
        sum_v += v;
        sum_v2 += v * v;
    }

    let n = s.samples.len() as f64;
    let mean_v = sum_v / n;
    let var_v = if n > 1.0 {
        ((sum_v2 - n * mean_v * mean_v) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    MiEstimate {
        bits: -mean_v / LN_2,
        gradient: -sum_g / (n * m as f64 * LN_2),
        std_error: (var_v / n).sqrt() / LN_2,
    }
}

/// Weighted and unweighted sums of per-channel mutual information.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    /// `sum_i w_i * I_i`.
    pub weighted: f64,
    /// `sum_i I_i`.
    pub sum: f64,
    pub per_channel: Vec<f64>,
}

/// Evaluates `sum_i w_i * I(|h_i| lambda_i)` on a shared sample set.
pub fn weighted_objective(
    lambda: &Allocation,
    channels: &ChannelState,
    w: &WeightVector,
    c: &Constellation,
    s: &SampleSet,
) -> Result<Objective> {
    let n = channels.len();
    for got in [lambda.len(), w.len()] {
        if got != n {
            return Err(Error::DimensionMismatch { expected: n, got });
        }
    }
    let per_channel = channels
        .amplitudes()
        .zip(lambda.lambda())
        .map(|(h, l)| EffectiveAmplitude::new(h * l).map(|a| mi_estimate(a, c, channels.noise(), s)))
        .collect::<Result<Vec<_>>>()?;
    let weighted = per_channel.iter().zip(w.as_slice()).map(|(i, w)| i * w).sum();
    let sum = per_channel.iter().sum();
    Ok(Objective {
        weighted,
        sum,
        per_channel,
    })
}
