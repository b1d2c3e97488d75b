//! Explicit iteration counts and envelope curves of the three convergence
//! theorems.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::optimizers::{theoretical_stepsize, Theorem, TheoryConstants};
use crate::error::LabError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationBound {
    pub theorem: Theorem,
    pub steps: u64,
    pub gamma: f64,
    /// Value the certified quantity is driven below.
    pub target: f64,
    pub target_description: String,
}

/// Largest step size each theorem admits.
pub fn step_cap(theorem: Theorem, c: &TheoryConstants) -> f64 {
    let beta = c.m_prime + 1.0;
    match theorem {
        Theorem::T1 | Theorem::T2 => 1.0 / (c.l_g * beta),
        Theorem::T3 => {
            let s = c.m.sqrt();
            (1.0 - s) / (c.l_g * beta * (1.0 + s) * (1.0 + s))
        }
    }
}

/// `T1`: average squared gradient norm of `g`; `T2`: `G_T`; `T3`: the
/// weighted gap functional. `initial` is `G_0` for T1/T2 and `d_0` for T3.
pub fn iteration_bound(
    theorem: Theorem,
    c: &TheoryConstants,
    eps: f64,
    initial: f64,
) -> Result<IterationBound> {
    let gamma = theoretical_stepsize(theorem, c, eps)?;
    if !(initial >= 0.0 && initial.is_finite()) {
        return Err(LabError::invalid("initial", "must be finite and non-negative"));
    }
    let ceil = |v: f64| -> u64 {
        if v.is_finite() && v > 0.0 {
            v.ceil() as u64
        } else {
            0
        }
    };
    let (steps, target, desc) = match theorem {
        Theorem::T1 => {
            let t = 4.0 * initial / (gamma * (1.0 - c.m) * eps);
            (
                ceil(t),
                eps + 1.5 * c.delta / (1.0 - c.m),
                "average of E|grad g(x_t)|^2 over t < T is at most eps + 3 delta / (2 (1 - m))",
            )
        }
        Theorem::T2 => {
            let t = (2.0 * initial / eps).ln() / (gamma * c.mu_g * (1.0 - c.m));
            (
                ceil(t),
                eps + c.delta / (c.mu_g * (1.0 - c.m)),
                "G_T is at most eps + delta / (mu_g (1 - m))",
            )
        }
        Theorem::T3 => {
            let s = c.m.sqrt();
            let (lm, lp) = ((1.0 - s) * (1.0 - s), (1.0 + s) * (1.0 + s));
            let beta = c.m_prime + 1.0;
            let alpha = c.alpha3();
            let t1 = 2.0 * beta * c.l_g * lp / (c.mu_g * lm)
                * (2.0 * c.l_g * beta * initial * lp / (eps * lm)).ln();
            let denom = c.mu_g * eps * lm + 4.0 * c.delta;
            let t2 = if alpha > 0.0 {
                4.0 * alpha / denom * (4.0 * initial * alpha * c.mu_g / (denom * eps)).ln()
            } else {
                0.0
            };
            (
                ceil(t1).max(ceil(t2)),
                eps + 4.0 * c.delta / (c.mu_g * lm),
                "weighted average of G_t is at most eps + 4 delta / (mu_g (1 - sqrt m)^2)",
            )
        }
    };
    Ok(IterationBound {
        theorem,
        steps: steps.max(1),
        gamma,
        target,
        target_description: desc.to_string(),
    })
}

/// Noise floor `Δ/(1−m) + γLσ′²/(1−m)` of the averaged gradient norm.
pub fn t1_floor(c: &TheoryConstants, gamma: f64) -> f64 {
    (c.delta + gamma * c.l_g * c.sigma2) / (1.0 - c.m)
}

/// Bound on `(1/T) Σ_{t<T} E‖∇g(x_t)‖²` for `T ≥ 1`.
pub fn t1_envelope(c: &TheoryConstants, gamma: f64, g0: f64, t: usize) -> f64 {
    2.0 * g0 / (t as f64 * gamma * (1.0 - c.m)) + t1_floor(c, gamma)
}

/// `½Ξ` with `Ξ = Δ/(μ(1−m)) + γLσ′²/(μ(1−m))`.
pub fn t2_half_xi(c: &TheoryConstants, gamma: f64) -> f64 {
    0.5 * (c.delta + gamma * c.l_g * c.sigma2) / (c.mu_g * (1.0 - c.m))
}

/// `(1 − γμ(1−m))^t G_0 + ½Ξ`.
pub fn t2_envelope(c: &TheoryConstants, gamma: f64, g0: f64, t: usize) -> f64 {
    let rate = 1.0 - gamma * c.mu_g * (1.0 - c.m);
    rate.max(0.0).powf(t as f64) * g0 + t2_half_xi(c, gamma)
}

/// `Ξ = γ(σ′² + Δ(M′+1))/(1−√m) + 2Δ/(μ(1−√m)²)`.
pub fn t3_xi(c: &TheoryConstants, gamma: f64) -> f64 {
    let s = 1.0 - c.m.sqrt();
    gamma * c.alpha3() / s + 2.0 * c.delta / (c.mu_g * s * s)
}

/// `d_0/(γ(1−√m))·exp(−(1−√m)γμT/2) + Ξ`.
pub fn t3_envelope(c: &TheoryConstants, gamma: f64, d0: f64, t: usize) -> f64 {
    let s = 1.0 - c.m.sqrt();
    d0 / (gamma * s) * (-s * gamma * c.mu_g * t as f64 / 2.0).exp() + t3_xi(c, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts(l: f64, mu: f64, mp: f64, s2: f64, m: f64, delta: f64) -> TheoryConstants {
        TheoryConstants {
            l_g: l,
            mu_g: mu,
            m_prime: mp,
            sigma2: s2,
            m,
            delta,
        }
    }

    #[test]
    fn t2_noiseless_is_logarithmic() {
        let c = consts(2.0, 2.0, 0.0, 0.0, 0.0, 0.0);
        let b = iteration_bound(Theorem::T2, &c, 1e-3, 10.0).unwrap();
        assert_eq!(b.gamma, 0.5);
        assert_eq!(b.steps, (2e4f64).ln().ceil() as u64);
        let t: Vec<f64> = [1e-2, 1e-4, 1e-8]
            .iter()
            .map(|&e| iteration_bound(Theorem::T2, &c, e, 10.0).unwrap().steps as f64)
            .collect();
        // ln(1/ε) doubles from 1e-4 to 1e-8 relative to 1e-2 to 1e-4.
        let ratio = (t[2] - t[1]) / (t[1] - t[0]);
        assert!((ratio - 2.0).abs() < 0.3, "{ratio}");
    }

    #[test]
    fn t1_noisy_is_inverse_square() {
        let c = consts(1.0, 1.0, 0.0, 4.0, 0.0, 0.0);
        let a = iteration_bound(Theorem::T1, &c, 1e-3, 5.0).unwrap().steps as f64;
        let b = iteration_bound(Theorem::T1, &c, 5e-4, 5.0).unwrap().steps as f64;
        assert!((b / a - 4.0).abs() < 0.4);
    }

    #[test]
    fn t3_halving_epsilon() {
        let c = consts(2.0, 2.0, 1.0, 0.0, 0.04, 0.0);
        let a = iteration_bound(Theorem::T3, &c, 1e-3, 4.0).unwrap();
        let b = iteration_bound(Theorem::T3, &c, 5e-4, 4.0).unwrap();
        let s = 0.2f64;
        let pref = 2.0 * 2.0 * 2.0 * (1.0 + s).powi(2) / (2.0 * (1.0 - s).powi(2));
        let growth = b.steps as f64 - a.steps as f64;
        assert!(growth >= 0.0 && growth <= pref * 2f64.ln() + 1.0);
        assert_eq!(a.gamma, b.gamma);
    }

    #[test]
    fn t3_with_noise_uses_both_branches() {
        let c = consts(2.0, 2.0, 0.5, 3.0, 0.1, 0.2);
        let b = iteration_bound(Theorem::T3, &c, 0.01, 50.0).unwrap();
        assert!(b.steps > 1);
        assert!(b.gamma <= step_cap(Theorem::T3, &c));
    }

    #[test]
    fn errors() {
        let c = consts(2.0, 2.0, 0.0, 0.0, 1.2, 0.0);
        assert!(matches!(
            iteration_bound(Theorem::T2, &c, 0.1, 1.0),
            Err(LabError::AssumptionViolated(_))
        ));
        let c = consts(2.0, 2.0, 0.0, 0.0, 0.0, 0.0);
        assert!(iteration_bound(Theorem::T2, &c, -0.1, 1.0).is_err());
    }

    #[test]
    fn envelopes_start_at_initial_plus_floor() {
        let c = consts(2.0, 2.0, 0.0, 1.0, 0.1, 0.3);
        let g = 0.1;
        assert!((t2_envelope(&c, g, 7.0, 0) - 7.0 - t2_half_xi(&c, g)).abs() < 1e-12);
        let s = 1.0 - 0.1f64.sqrt();
        assert!((t3_envelope(&c, g, 7.0, 0) - 7.0 / (g * s) - t3_xi(&c, g)).abs() < 1e-12);
    }
}
