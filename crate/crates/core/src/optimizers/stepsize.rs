//! Step-size rules: theoretical choices, grid search, and the weight sequence
//! used by the strongly-convex-style averaged bound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{gap_reference, run_engine, OptimizerConfig};
use crate::error::{LabError, Result};
use crate::problems::{Part, ProblemInstance};
use crate::vecops::norm_sq;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Theorem {
    T1,
    T2,
    T3,
}

impl Theorem {
    pub fn from_index(i: u32) -> Option<Self> {
        match i {
            1 => Some(Theorem::T1),
            2 => Some(Theorem::T2),
            3 => Some(Theorem::T3),
            _ => None,
        }
    }

    pub fn index(self) -> u32 {
        match self {
            Theorem::T1 => 1,
            Theorem::T2 => 2,
            Theorem::T3 => 3,
        }
    }
}

/// Constants entering the step-size and iteration-count formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub l_g: f64,
    /// Only used by T2 and T3.
    pub mu_g: f64,
    pub m_prime: f64,
    pub sigma2: f64,
    pub m: f64,
    pub delta: f64,
}

impl TheoryConstants {
    pub(crate) fn validate(&self, theorem: Theorem) -> Result<()> {
        let finite_nonneg = |v: f64, name: &'static str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(LabError::invalid(name, "must be finite and non-negative"))
            }
        };
        if !(self.l_g > 0.0 && self.l_g.is_finite()) {
            return Err(LabError::invalid("l_g", "must be positive and finite"));
        }
        finite_nonneg(self.m_prime, "m_prime")?;
        finite_nonneg(self.sigma2, "sigma2")?;
        finite_nonneg(self.delta, "delta")?;
        finite_nonneg(self.m, "m")?;
        if self.m >= 1.0 {
            return Err(LabError::AssumptionViolated(format!("m = {} >= 1", self.m)));
        }
        if theorem != Theorem::T1 && !(self.mu_g > 0.0 && self.mu_g.is_finite()) {
            return Err(LabError::invalid("mu_g", "must be positive and finite"));
        }
        Ok(())
    }

    pub(crate) fn alpha3(&self) -> f64 {
        self.sigma2 + self.delta * (self.m_prime + 1.0)
    }
}

pub(crate) fn check_epsilon(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(LabError::invalid("epsilon", "must be positive and finite"))
    }
}

/// Step size prescribed by the extended form of each theorem. A branch whose
/// denominator vanishes (no noise) is infinite and drops out of the `min`.
pub fn theoretical_stepsize(theorem: Theorem, c: &TheoryConstants, eps: f64) -> Result<f64> {
    c.validate(theorem)?;
    check_epsilon(eps)?;
    let l = c.l_g;
    let beta = c.m_prime + 1.0;
    let gamma = match theorem {
        Theorem::T1 => {
            let second = if c.sigma2 > 0.0 {
                (eps * (1.0 - c.m) + c.delta) / (2.0 * l * c.sigma2)
            } else {
                f64::INFINITY
            };
            (1.0 / (l * beta)).min(second)
        }
        Theorem::T2 => {
            let second = if c.sigma2 > 0.0 {
                (eps * (1.0 - c.m) * c.mu_g + c.delta) / (l * c.sigma2)
            } else {
                f64::INFINITY
            };
            (1.0 / (l * beta)).min(second)
        }
        Theorem::T3 => {
            let s = c.m.sqrt();
            let first = (1.0 - s) / (l * beta * (1.0 + s) * (1.0 + s));
            let alpha = c.alpha3();
            let second = if alpha > 0.0 {
                (c.mu_g * eps * (1.0 - s) * (1.0 - s) + 4.0 * c.delta)
                    / (2.0 * alpha * (1.0 - s) * c.mu_g)
            } else {
                f64::INFINITY
            };
            first.min(second)
        }
    };
    Ok(gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    /// `lo·(hi/lo)^{i/(k−1)}`: both endpoints included.
    Endpoints,
    /// `lo·(hi/lo)^{(i+½)/k}`: midpoints of `k` equal log-cells.
    LogCentered,
}

/// `count` geometrically spaced step sizes in `[lo, hi]`.
pub fn step_grid(lo: f64, hi: f64, count: usize, mode: GridMode) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(LabError::invalid("grid", "need 0 < lo <= hi < inf"));
    }
    if count == 0 {
        return Err(LabError::invalid("grid", "count must be at least 1"));
    }
    let ratio = (hi / lo).ln();
    Ok((0..count)
        .map(|i| {
            let frac = match mode {
                GridMode::Endpoints if count == 1 => 0.0,
                GridMode::Endpoints => i as f64 / (count - 1) as f64,
                GridMode::LogCentered => (i as f64 + 0.5) / count as f64,
            };
            lo * (ratio * frac).exp()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchCriterion {
    FinalF,
    FinalGGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchOutcome {
    pub gamma: f64,
    /// `(γ, mean criterion)`; `+∞` when any replica diverged, `None` when
    /// the point exceeded the cap and was skipped.
    pub scores: Vec<(f64, Option<f64>)>,
}

/// Grid search with every replica starting from `template.x0`.
pub fn grid_search_stepsize(
    problem: &ProblemInstance,
    template: &OptimizerConfig,
    grid: &[f64],
    criterion: SearchCriterion,
    replicas: usize,
) -> Result<f64> {
    if replicas == 0 {
        return Err(LabError::invalid("replicas", "must be at least 1"));
    }
    let starts = vec![template.x0.clone(); replicas];
    Ok(grid_search_stepsize_from(problem, template, grid, criterion, &starts, None)?.gamma)
}

/// Picks the grid point minimizing the mean criterion over one run per start
/// (replica `r` uses `starts[r]` and stream index `r`). Points above `cap`
/// are skipped. Ties go to the smaller step size.
pub fn grid_search_stepsize_from(
    problem: &ProblemInstance,
    template: &OptimizerConfig,
    grid: &[f64],
    criterion: SearchCriterion,
    starts: &[Vec<f64>],
    cap: Option<f64>,
) -> Result<GridSearchOutcome> {
    if grid.is_empty() {
        return Err(LabError::invalid("grid", "must not be empty"));
    }
    if starts.is_empty() {
        return Err(LabError::invalid("replicas", "must be at least 1"));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    for &g in &sorted {
        template.clone().with_gamma(g).validate(problem)?;
    }
    for x0 in starts {
        problem.check_point(x0)?;
    }
    let g_star = gap_reference(problem, template);
    if criterion == SearchCriterion::FinalGGap && g_star.is_none() {
        return Err(LabError::NotApplicable(
            "g-gap criterion needs a known minimum of g".into(),
        ));
    }
    let mut scores = Vec::with_capacity(sorted.len());
    let mut best: Option<(f64, f64)> = None;
    for &gamma in &sorted {
        if cap.is_some_and(|c| gamma > c) {
            scores.push((gamma, None));
            continue;
        }
        let per_replica: Vec<f64> = starts
            .par_iter()
            .enumerate()
            .map(|(r, x0)| {
                let cfg = OptimizerConfig {
                    gamma,
                    x0: x0.clone(),
                    replica: r as u64,
                    ..template.clone()
                };
                let s = run_engine(problem, &cfg, |_| {});
                if s.diverged {
                    return f64::INFINITY;
                }
                let v = match criterion {
                    SearchCriterion::FinalF => problem.value_unchecked(Part::F, &s.last),
                    SearchCriterion::FinalGGap => {
                        problem.value_unchecked(Part::G, &s.last) - g_star.unwrap_or(0.0)
                    }
                };
                if v.is_finite() {
                    v
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        let mean = per_replica.iter().sum::<f64>() / per_replica.len() as f64;
        scores.push((gamma, Some(mean)));
        if mean.is_finite() && best.is_none_or(|(_, b)| mean < b) {
            best = Some((gamma, mean));
        }
    }
    if scores.iter().all(|(_, s)| s.is_none()) {
        return Err(LabError::invalid("grid", "every grid point exceeds the step-size cap"));
    }
    match best {
        Some((gamma, _)) => Ok(GridSearchOutcome { gamma, scores }),
        None => Err(LabError::NoViableStepsize),
    }
}

/// Normalized weights `w_t / W_T`, `w_t = ρ^{−(t+1)}`, `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem3Weights {
    pub rho: f64,
    pub weights: Vec<f64>,
}

impl Theorem3Weights {
    /// `(1/W_T) Σ w_t G_t`; `gaps` must hold `G_0..G_T`.
    pub fn functional(&self, gaps: &[f64]) -> Result<f64> {
        if gaps.len() != self.weights.len() {
            return Err(LabError::DimensionMismatch {
                expected: self.weights.len(),
                got: gaps.len(),
            });
        }
        Ok(self.weights.iter().zip(gaps).map(|(w, g)| w * g).sum())
    }
}

/// Contraction factor `ρ = 1 − γμ(1−√m)/2` of the weighted bound.
pub fn theorem3_rho(gamma: f64, mu_g: f64, m: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(LabError::invalid("gamma", "must be positive and finite"));
    }
    if !(mu_g > 0.0 && mu_g.is_finite()) {
        return Err(LabError::invalid("mu_g", "must be positive and finite"));
    }
    if !(0.0..1.0).contains(&m) {
        return Err(LabError::AssumptionViolated(format!("m = {m} outside [0, 1)")));
    }
    let k = gamma * mu_g * (1.0 - m.sqrt()) / 2.0;
    if k >= 1.0 {
        return Err(LabError::invalid(
            "gamma",
            format!("contraction factor γμ(1−√m)/2 = {k} must be below 1"),
        ));
    }
    Ok(1.0 - k)
}

/// Weights computed from `w_t/w_T = ρ^{T−t}`, which never overflows.
pub fn theorem3_weights(gamma: f64, mu_g: f64, m: f64, steps: usize) -> Result<Theorem3Weights> {
    let rho = theorem3_rho(gamma, mu_g, m)?;
    let ln_rho = rho.ln();
    let raw: Vec<f64> = (0..=steps)
        .map(|t| ((steps - t) as f64 * ln_rho).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(Theorem3Weights {
        rho,
        weights: raw.into_iter().map(|w| w / total).collect(),
    })
}

/// `(1/W_T) Σ w_t G_t` computed in one pass (`A ← ρA + G_t`, `B ← ρB + 1`).
pub fn weighted_gap_functional(rho: f64, gaps: &[f64]) -> f64 {
    let (mut a, mut b) = (0.0, 0.0);
    for &g in gaps {
        a = rho * a + g;
        b = rho * b + 1.0;
    }
    a / b
}

/// Minimum of `g` used as the gap reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GReference {
    pub value: f64,
    /// `‖∇g‖` at the returned point (zero when the minimizer is known).
    pub grad_norm: f64,
    pub iterations: usize,
    pub exact: bool,
}

const REFERENCE_TOL: f64 = 1e-10;
const REFERENCE_MAX_ITERS: usize = 2_000_000;

/// `min g`: exact when the minimizer is known, otherwise from a long
/// gradient-descent run on `g` alone with step `1/L_g` from the origin.
pub fn reference_g_star(problem: &ProblemInstance) -> Result<GReference> {
    if let Some(x) = &problem.constants().x_g_star {
        return Ok(GReference {
            value: problem.value_unchecked(Part::G, x),
            grad_norm: 0.0,
            iterations: 0,
            exact: true,
        });
    }
    let l = problem.constants().l_g.ok_or_else(|| {
        LabError::NotApplicable("reference run needs the smoothness constant of g".into())
    })?;
    let gamma = 1.0 / l;
    let d = problem.dimension();
    let mut x = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut iterations = 0;
    loop {
        problem.grad_into(Part::G, &x, &mut grad);
        let norm = norm_sq(&grad).sqrt();
        if norm <= REFERENCE_TOL || iterations >= REFERENCE_MAX_ITERS {
            return Ok(GReference {
                value: problem.value_unchecked(Part::G, &x),
                grad_norm: norm,
                iterations,
                exact: false,
            });
        }
        for (xi, gi) in x.iter_mut().zip(&grad) {
            *xi -= gamma * gi;
        }
        iterations += 1;
    }
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
    fn noiseless_steps() {
        let c = consts(2.0, 2.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(theoretical_stepsize(Theorem::T2, &c, 0.3).unwrap(), 0.5);
        let c = consts(3.0, 1.0, 1.0, 0.0, 0.2, 0.1);
        assert_eq!(theoretical_stepsize(Theorem::T1, &c, 0.1).unwrap(), 1.0 / 6.0);
        let c = consts(3.0, 1.0, 2.0, 5.0, 0.0, 0.0);
        let g3 = theoretical_stepsize(Theorem::T3, &c, 1e3).unwrap();
        assert_eq!(g3, 1.0 / 9.0);
    }

    #[test]
    fn stepsize_errors() {
        let c = consts(2.0, 2.0, 0.0, 0.0, 1.0, 0.0);
        assert!(matches!(
            theoretical_stepsize(Theorem::T1, &c, 0.1),
            Err(LabError::AssumptionViolated(_))
        ));
        let c = consts(2.0, 2.0, 0.0, 0.0, 0.0, 0.0);
        assert!(theoretical_stepsize(Theorem::T1, &c, 0.0).is_err());
        let c = consts(2.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(theoretical_stepsize(Theorem::T2, &c, 0.1).is_err());
        assert!(theoretical_stepsize(Theorem::T1, &c, 0.1).is_ok());
    }

    #[test]
    fn noisy_branch_active() {
        let c = consts(2.0, 2.0, 1.0, 100.0, 0.25, 0.5);
        let g1 = theoretical_stepsize(Theorem::T1, &c, 0.1).unwrap();
        assert!((g1 - (0.1 * 0.75 + 0.5) / 400.0).abs() < 1e-15);
        let g2 = theoretical_stepsize(Theorem::T2, &c, 0.1).unwrap();
        assert!((g2 - (0.1 * 0.75 * 2.0 + 0.5) / 200.0).abs() < 1e-15);
        let alpha = 100.0 + 0.5 * 2.0;
        let g3 = theoretical_stepsize(Theorem::T3, &c, 0.1).unwrap();
        let want = (2.0 * 0.1 * 0.25 + 2.0) / (2.0 * alpha * 0.5 * 2.0);
        assert!((g3 - want).abs() < 1e-15);
    }

    #[test]
    fn grids() {
        let g = step_grid(1e-5, 1.0, 4, GridMode::Endpoints).unwrap();
        let want = [1e-5, 10f64.powf(-10.0 / 3.0), 10f64.powf(-5.0 / 3.0), 1.0];
        for (a, b) in g.iter().zip(want) {
            assert!((a / b - 1.0).abs() < 1e-12);
        }
        let g = step_grid(1e-5, 1.0, 4, GridMode::LogCentered).unwrap();
        assert!((g[2] / 10f64.powf(-5.0 + 5.0 * 2.5 / 4.0) - 1.0).abs() < 1e-12);
        assert!((g[2] - 0.013335).abs() < 1e-5);
        assert!(step_grid(0.0, 1.0, 3, GridMode::Endpoints).is_err());
    }

    #[test]
    fn grid_search_on_quadratic() {
        let p = ProblemInstance::quadratic(1).unwrap();
        let t = OptimizerConfig::gd(0.1, 40, vec![1.0]);
        let g = grid_search_stepsize(&p, &t, &[0.25, 0.9, 1.5], SearchCriterion::FinalF, 1).unwrap();
        assert_eq!(g, 0.25);
        let g = grid_search_stepsize(&p, &t, &[0.3], SearchCriterion::FinalGGap, 3).unwrap();
        assert_eq!(g, 0.3);
        let long = OptimizerConfig::gd(0.1, 2000, vec![1.0]);
        let err = grid_search_stepsize(&p, &long, &[1.5, 2.0], SearchCriterion::FinalF, 2);
        assert!(matches!(err, Err(LabError::NoViableStepsize)));
    }

    #[test]
    fn grid_search_ties_go_small() {
        // γ = 0.5 and γ = 0.5 + tiny both land on 0 exactly after one step for
        // x0 = 0; all scores equal.
        let p = ProblemInstance::quadratic(1).unwrap();
        let t = OptimizerConfig::gd(0.1, 5, vec![0.0]);
        let g = grid_search_stepsize(&p, &t, &[0.4, 0.2, 0.3], SearchCriterion::FinalF, 2).unwrap();
        assert_eq!(g, 0.2);
    }

    #[test]
    fn grid_cap_skips_points() {
        let p = ProblemInstance::quadratic(1).unwrap();
        let t = OptimizerConfig::gd(0.1, 40, vec![1.0]);
        let out = grid_search_stepsize_from(
            &p,
            &t,
            &[0.1, 0.5],
            SearchCriterion::FinalF,
            &[vec![1.0]],
            Some(0.2),
        )
        .unwrap();
        assert_eq!(out.gamma, 0.1);
        assert_eq!(out.scores[1].1, None);
    }

    #[test]
    fn two_term_weights() {
        let w = theorem3_weights(0.2, 2.0, 0.25, 1).unwrap();
        let rho = 1.0 - 0.2 * 2.0 * 0.5 / 2.0;
        assert!((w.rho - rho).abs() < 1e-15);
        assert!((w.weights[0] - rho / (1.0 + rho)).abs() < 1e-15);
        assert!((w.weights[1] - 1.0 / (1.0 + rho)).abs() < 1e-15);
    }

    #[test]
    fn half_rho_weights_exact() {
        // ρ = 1/2: w_t/W = 2^t / (2^11 − 1).
        let w = theorem3_weights(1.0, 1.0, 0.0, 10).unwrap();
        assert_eq!(w.rho, 0.5);
        for t in 0..=10 {
            let exact = f64::from(1u32 << t) / 2047.0;
            assert!((w.weights[t] - exact).abs() <= 1e-14);
        }
    }

    #[test]
    fn small_gamma_is_uniform() {
        let w = theorem3_weights(1e-14, 1.0, 0.0, 9).unwrap();
        for v in &w.weights {
            assert!((v - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn functional_of_constant_is_constant() {
        let w = theorem3_weights(0.3, 1.7, 0.1, 200).unwrap();
        let gaps = vec![2.5; 201];
        assert!((w.functional(&gaps).unwrap() - 2.5).abs() < 1e-13);
        assert!((weighted_gap_functional(w.rho, &gaps) - 2.5).abs() < 1e-13);
        let gaps: Vec<f64> = (0..201).map(|t| 1.0 / (1.0 + t as f64)).collect();
        let a = w.functional(&gaps).unwrap();
        let b = weighted_gap_functional(w.rho, &gaps);
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn weights_reject_large_factor() {
        assert!(theorem3_weights(2.0, 1.0, 0.0, 3).is_err());
        assert!(theorem3_weights(0.1, 1.0, 1.0, 3).is_err());
    }

    #[test]
    fn reference_minimum_for_logistic() {
        use crate::problems::Dataset;
        let p = ProblemInstance::finite_sum(Dataset::synthetic(60, 3, 2).unwrap()).unwrap();
        let r = reference_g_star(&p).unwrap();
        assert!(r.grad_norm <= REFERENCE_TOL);
        assert!(r.value < std::f64::consts::LN_2);
        let q = reference_g_star(&ProblemInstance::quadratic(2).unwrap()).unwrap();
        assert!(q.exact && q.value == 0.0);
    }
}
