//! Gauss–Hermite quadrature for expectations under a normal distribution.

use std::f64::consts::PI;

/// Nodes and weights for `E[φ(Z)]`, `Z ~ N(0, 1)`.
///
/// Built from the physicists' rule `∫ e^{-t²} φ(t) dt` by Newton iteration on
/// the orthonormal Hermite recurrence, then rescaled to the standard normal.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be positive");
        let n = order;
        let nf = n as f64;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let pim4 = PI.powf(-0.25);
        let half = n.div_ceil(2);
        let mut z = 0.0f64;
        for i in 0..half {
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
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        let norm = PI.sqrt();
        let nodes = x.iter().map(|t| t * std::f64::consts::SQRT_2).collect();
        let weights = w.iter().map(|v| v / norm).collect();
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Standard-normal nodes.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[φ(Z)]` for `Z ~ N(0, 1)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut phi: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * phi(t))
            .sum()
    }

    /// `E[φ(Z)]` for `Z ~ N(0, std²)`.
    pub fn expect_scaled<F: FnMut(f64) -> f64>(&self, std: f64, mut phi: F) -> f64 {
        self.expect(|t| phi(std * t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one() {
        for n in [1, 2, 5, 20, 64] {
            let gh = GaussHermite::new(n);
            let s: f64 = gh.weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-13, "n={n} sum={s}");
        }
    }

    #[test]
    fn even_moments_are_double_factorials() {
        let gh = GaussHermite::new(64);
        let mut df = 1.0;
        for k in 1..=20u32 {
            df *= (2 * k - 1) as f64;
            let got = gh.expect(|t| t.powi(2 * k as i32));
            assert!((got - df).abs() <= 1e-11 * df, "k={k}: {got} vs {df}");
            let odd = gh.expect(|t| t.powi(2 * k as i32 - 1));
            assert!(odd.abs() < 1e-9 * df);
        }
    }

    #[test]
    fn characteristic_function() {
        // E[cos(sZ)] = exp(-s²/2)
        let gh = GaussHermite::new(64);
        for s in [0.5, 1.0, 2.0, 3.0] {
            let got = gh.expect(|t| (s * t).cos());
            assert!((got - (-s * s / 2.0).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn small_rule_is_exact_for_low_degree() {
        let gh = GaussHermite::new(3);
        assert!((gh.expect(|t| t.powi(4)) - 3.0).abs() < 1e-13);
    }
}
