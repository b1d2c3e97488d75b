//! Expected one-step descent of `g` under perturbed SGD.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::optimizers::TheoryConstants;
use crate::problems::{stochastic_grad_into, NoiseSpec, Part, ProblemInstance};
use crate::rng::{Purpose, StreamKey};
use crate::smoothing::SmoothingSpec;
use crate::stats::RunningStats;
use crate::vecops::norm_sq;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneStepReport {
    pub x: Vec<f64>,
    /// `(1−m)/2·‖∇g(x)‖²`
    pub lhs: f64,
    /// `(g(x) − E g(x⁺))/γ + Δ/2 + γLσ′²/2`
    pub rhs: f64,
    pub std_err: f64,
    pub holds: bool,
}

/// Monte Carlo check of
/// `(1−m)/2·‖∇g(x)‖² ≤ (g(x) − E g(x⁺))/γ + Δ/2 + γLσ′²/2`
/// with `x⁺ = x − γ∇f(x − u, ξ)`, allowing three standard errors.
#[allow(clippy::too_many_arguments)]
pub fn one_step_progress(
    problem: &ProblemInstance,
    smoothing: &SmoothingSpec,
    noise: NoiseSpec,
    c: &TheoryConstants,
    gamma: f64,
    x: &[f64],
    draws: usize,
    seed: u64,
) -> Result<OneStepReport> {
    problem.check_point(x)?;
    smoothing.validate(problem)?;
    noise.validate(problem)?;
    if draws < 2 {
        return Err(LabError::invalid("draws", "need at least two"));
    }
    let cap = 1.0 / (c.l_g * (c.m_prime + 1.0));
    if !(gamma > 0.0 && gamma <= cap) {
        return Err(LabError::invalid("gamma", format!("must lie in (0, {cap}]")));
    }
    let d = problem.dimension();
    let key = StreamKey::new(seed, 0, 0, Purpose::Estimation);
    let mut rng_u = key.with_purpose(Purpose::Smoothing).rng();
    let mut rng_w = key.with_purpose(Purpose::Noise).rng();
    let (mut u, mut scratch, mut q, mut grad, mut next) =
        (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let g0 = problem.value_unchecked(Part::G, x);
    let mut drop = RunningStats::new();
    for _ in 0..draws {
        smoothing.sample_into(problem, x, &mut rng_u, &mut u, &mut scratch);
        for j in 0..d {
            q[j] = x[j] - u[j];
        }
        stochastic_grad_into(problem, &q, &mut rng_w, noise, &mut grad);
        for j in 0..d {
            next[j] = x[j] - gamma * grad[j];
        }
        drop.push((g0 - problem.value_unchecked(Part::G, &next)) / gamma);
    }
    let gg = problem.gradient(Part::G, x)?;
    let lhs = 0.5 * (1.0 - c.m) * norm_sq(&gg);
    let rhs = drop.mean() + 0.5 * c.delta + 0.5 * gamma * c.l_g * c.sigma2;
    let se = drop.std_err();
    Ok(OneStepReport {
        x: x.to_vec(),
        lhs,
        rhs,
        std_err: se,
        holds: lhs <= rhs + 3.0 * se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_sgd() {
        let p = ProblemInstance::quadratic(1).unwrap();
        let c = TheoryConstants {
            l_g: 2.0,
            mu_g: 2.0,
            m_prime: 0.0,
            sigma2: 1.0,
            m: 0.0,
            delta: 0.0,
        };
        for x in [-3.0, 0.0, 0.5, 4.0] {
            let r = one_step_progress(&p, &SmoothingSpec::None, NoiseSpec::Gaussian { variance: 1.0 }, &c, 0.25, &[x], 5000, 1)
                .unwrap();
            assert!(r.holds, "{r:?}");
        }
    }

    #[test]
    fn rejects_large_step() {
        let p = ProblemInstance::quadratic(1).unwrap();
        let c = TheoryConstants {
            l_g: 2.0,
            mu_g: 2.0,
            m_prime: 1.0,
            sigma2: 0.0,
            m: 0.0,
            delta: 0.0,
        };
        assert!(one_step_progress(&p, &SmoothingSpec::None, NoiseSpec::None, &c, 0.3, &[1.0], 10, 0).is_err());
    }
}
