//! Deterministic reference for the mutual information: a tensor-product
//! Gauss-Hermite rule over the two real noise components. Used as a test
//! oracle and by the `oracle` CLI command, never inside the control loop.

use std::f64::consts::{LN_2, PI};

use super::{Constellation, EffectiveAmplitude, NoiseModel};

pub const DEFAULT_QUADRATURE_NODES: usize = 64;

/// Nodes and weights of the `n`-point Gauss-Hermite rule for the weight
/// `exp(-x^2)` on the real line, by Newton iteration on the normalized
/// Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature needs at least one node");
    const EPS: f64 = 3e-14;
    let pim4 = PI.powf(-0.25);
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = 0.0;
    for i in 0..n.div_ceil(2) {
        // Initial guesses for the roots, largest first.
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let prev = z;
            z = prev - p1 / pp;
            if (z - prev).abs() <= EPS {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Mutual information in bits by quadrature with the default node count.
pub fn mi_exact(a: EffectiveAmplitude, c: &Constellation, noise: &NoiseModel) -> f64 {
    mi_exact_with_nodes(a, c, noise, DEFAULT_QUADRATURE_NODES)
}

/// Evaluates `log M - (1/M) sum_k E[log sum_j p(y|s_j)/p(y|s_k)]` with
/// `y = a s_k + z`, integrating the noise `z ~ N(0, t I)` on an
/// `nodes x nodes` grid.
pub fn mi_exact_with_nodes(a: EffectiveAmplitude, c: &Constellation, noise: &NoiseModel, nodes: usize) -> f64 {
    let a = a.get();
    let t = noise.t();
    let scale = (2.0 * t).sqrt();
    let (x, w) = gauss_hermite(nodes);
    let m = c.len();
    let ln_m = (m as f64).ln();
    let pts = c.points();

    let mut total = 0.0;
    let mut ratios = vec![0.0; m];
    for (xi, wi) in x.iter().zip(&w) {
        for (xj, wj) in x.iter().zip(&w) {
            let z = [scale * xi, scale * xj];
            let z2 = z[0] * z[0] + z[1] * z[1];
            let mut acc = 0.0;
            for sk in pts {
                // y - a s_j = a (s_k - s_j) + z
                for (r, sj) in ratios.iter_mut().zip(pts) {
                    let e0 = a * (sk[0] - sj[0]) + z[0];
                    let e1 = a * (sk[1] - sj[1]) + z[1];
                    *r = -(e0 * e0 + e1 * e1 - z2) / (2.0 * t);
                }
                let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + ratios.iter().map(|r| (r - max).exp()).sum::<f64>().ln();
                acc += lse - ln_m;
            }
            total += wi * wj * acc;
        }
    }
    -total / (PI * m as f64 * LN_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_rule_integrates_moments() {
        let (x, w) = gauss_hermite(64);
        let m0: f64 = w.iter().sum();
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m0 - PI.sqrt()).abs() < 1e-12);
        assert!((m2 - PI.sqrt() / 2.0).abs() < 1e-12);
        assert!((m4 - 3.0 * PI.sqrt() / 4.0).abs() < 1e-11);
        assert!(x.windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn hermite_rule_small_orders() {
        let (x, w) = gauss_hermite(2);
        assert!((x[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-14);
        assert!((w[0] - PI.sqrt() / 2.0).abs() < 1e-14);
        let (x, _) = gauss_hermite(3);
        assert!(x[1].abs() < 1e-14);
    }

    #[test]
    fn exact_is_zero_at_zero() {
        let c = Constellation::qpsk();
        let a = EffectiveAmplitude::new(0.0).unwrap();
        assert_eq!(mi_exact(a, &c, &NoiseModel::default()), 0.0);
    }
}
