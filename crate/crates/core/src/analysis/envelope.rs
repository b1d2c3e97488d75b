//! Per-step Monte Carlo panels of the gap sequences and their comparison with
//! the theoretical envelopes.

use serde::{Deserialize, Serialize};

use super::bounds::{step_cap, t1_envelope, t1_floor, t2_envelope, t2_half_xi, t3_envelope, t3_xi};
use crate::error::{LabError, Result};
use crate::optimizers::{
    gap_reference, run_engine, theorem3_rho, OptimizerConfig, Theorem, TheoryConstants, Trajectory,
};
use crate::problems::{Part, ProblemInstance};
use crate::stats::RunningStats;
use crate::vecops::{dist_sq, norm_sq};

/// Which derived series a panel accumulates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelOptions {
    /// Weight ratio `ρ` of the weighted gap functional; needs the minimizer
    /// of `g` and `μ_g`.
    pub t3_rho: Option<f64>,
}

impl PanelOptions {
    /// Options for a panel that can be checked against all three theorems.
    pub fn for_theorem3(gamma: f64, mu_g: f64, m: f64) -> Result<Self> {
        Ok(Self {
            t3_rho: Some(theorem3_rho(gamma, mu_g, m)?),
        })
    }
}

struct ReplicaSeries {
    gap: Vec<f64>,
    dist: Option<Vec<f64>>,
    grad_g_sq: Vec<f64>,
    diverged: bool,
}

/// Running statistics across replicas of `G_t`, `d_t = ‖x_t − x_g*‖²`,
/// `‖∇g(x_t)‖²`, the running average `Φ_T` of the latter and the weighted
/// functional `F_T = (1/W_T)Σ_{t≤T} w_t G_t + (μ/2) d_{T+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapPanel {
    steps: usize,
    replicas: usize,
    diverged: usize,
    mu_g: Option<f64>,
    t3_rho: Option<f64>,
    gap: Vec<RunningStats>,
    dist: Option<Vec<RunningStats>>,
    grad_g_sq: Vec<RunningStats>,
    t1_average: Vec<RunningStats>,
    t3_functional: Option<Vec<RunningStats>>,
}

impl GapPanel {
    fn empty(problem: &ProblemInstance, steps: usize, options: PanelOptions) -> Result<Self> {
        let c = problem.constants();
        let has_dist = c.x_g_star.is_some();
        if options.t3_rho.is_some() && (!has_dist || c.mu_g.is_none()) {
            return Err(LabError::NotApplicable(
                "weighted functional needs the minimizer of g and mu_g".into(),
            ));
        }
        let blank = |n: usize| vec![RunningStats::new(); n];
        Ok(Self {
            steps,
            replicas: 0,
            diverged: 0,
            mu_g: c.mu_g,
            t3_rho: options.t3_rho,
            gap: blank(steps + 1),
            dist: has_dist.then(|| blank(steps + 1)),
            grad_g_sq: blank(steps + 1),
            t1_average: blank(steps),
            t3_functional: options.t3_rho.map(|_| blank(steps)),
        })
    }

    fn push(&mut self, s: ReplicaSeries) {
        if s.diverged {
            self.diverged += 1;
            return;
        }
        self.replicas += 1;
        for (acc, v) in self.gap.iter_mut().zip(&s.gap) {
            acc.push(*v);
        }
        for (acc, v) in self.grad_g_sq.iter_mut().zip(&s.grad_g_sq) {
            acc.push(*v);
        }
        let mut sum = 0.0;
        for (t, acc) in self.t1_average.iter_mut().enumerate() {
            sum += s.grad_g_sq[t];
            acc.push(sum / (t + 1) as f64);
        }
        if let (Some(acc), Some(d)) = (self.dist.as_mut(), s.dist.as_ref()) {
            for (a, v) in acc.iter_mut().zip(d) {
                a.push(*v);
            }
        }
        if let (Some(acc), Some(rho), Some(d), Some(mu)) =
            (self.t3_functional.as_mut(), self.t3_rho, s.dist.as_ref(), self.mu_g)
        {
            let (mut a, mut b) = (0.0, 0.0);
            for (t, slot) in acc.iter_mut().enumerate() {
                a = rho * a + s.gap[t];
                b = rho * b + 1.0;
                slot.push(a / b + 0.5 * mu * d[t + 1]);
            }
        }
    }

    fn series_of(problem: &ProblemInstance, g_star: f64, iterates: &[&[f64]]) -> ReplicaSeries {
        let x_star = problem.constants().x_g_star.as_deref();
        let mut gg = vec![0.0; problem.dimension()];
        let mut s = ReplicaSeries {
            gap: Vec::with_capacity(iterates.len()),
            dist: x_star.map(|_| Vec::with_capacity(iterates.len())),
            grad_g_sq: Vec::with_capacity(iterates.len()),
            diverged: false,
        };
        for x in iterates {
            s.gap.push(problem.value_unchecked(Part::G, x) - g_star);
            problem.grad_into(Part::G, x, &mut gg);
            s.grad_g_sq.push(norm_sq(&gg));
            if let (Some(d), Some(xs)) = (s.dist.as_mut(), x_star) {
                d.push(dist_sq(x, xs));
            }
        }
        s
    }

    /// Runs `replicas` copies of `template` (replica indices `0..replicas`)
    /// and accumulates them in replica order. Diverged replicas are counted
    /// and left out of the statistics.
    pub fn simulate(
        problem: &ProblemInstance,
        template: &OptimizerConfig,
        replicas: usize,
        options: PanelOptions,
    ) -> Result<Self> {
        template.validate(problem)?;
        if replicas == 0 {
            return Err(LabError::invalid("replicas", "must be positive"));
        }
        let g_star = gap_reference(problem, template)
            .ok_or_else(|| LabError::NotApplicable("gap needs the minimum of g".into()))?;
        let mut panel = Self::empty(problem, template.steps, options)?;
        let d = problem.dimension();
        super::map_ordered(
            replicas,
            |r| {
                let cfg = template.clone().with_replica(r as u64);
                let mut flat = Vec::with_capacity((cfg.steps + 1) * d);
                let summary = run_engine(problem, &cfg, |v| flat.extend_from_slice(v.x));
                if summary.diverged {
                    return ReplicaSeries {
                        gap: Vec::new(),
                        dist: None,
                        grad_g_sq: Vec::new(),
                        diverged: true,
                    };
                }
                let rows: Vec<&[f64]> = flat.chunks(d).collect();
                Self::series_of(problem, g_star, &rows)
            },
            |_, s| panel.push(s),
        );
        Ok(panel)
    }

    /// Builds a panel from recorded trajectories of equal length.
    pub fn from_trajectories(
        problem: &ProblemInstance,
        trajectories: &[Trajectory],
        g_star: f64,
        options: PanelOptions,
    ) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| LabError::invalid("trajectories", "need at least one"))?;
        let steps = trajectories
            .iter()
            .find(|t| !t.diverged())
            .unwrap_or(first)
            .len();
        let mut panel = Self::empty(problem, steps, options)?;
        for tr in trajectories {
            if tr.diverged() {
                panel.diverged += 1;
                continue;
            }
            if tr.len() != steps || tr.dim() != problem.dimension() {
                return Err(LabError::invalid("trajectories", "lengths and dimensions must agree"));
            }
            let rows: Vec<&[f64]> = (0..=steps).map(|t| tr.iterate(t)).collect();
            panel.push(Self::series_of(problem, g_star, &rows));
        }
        Ok(panel)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Replicas included in the statistics.
    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn diverged(&self) -> usize {
        self.diverged
    }

    /// `G_t`, `t = 0..=T`.
    pub fn gap(&self) -> &[RunningStats] {
        &self.gap
    }

    /// `‖x_t − x_g*‖²`, `t = 0..=T`, when the minimizer is known.
    pub fn dist(&self) -> Option<&[RunningStats]> {
        self.dist.as_deref()
    }

    pub fn grad_g_sq(&self) -> &[RunningStats] {
        &self.grad_g_sq
    }

    /// `Φ_T` for `T = 1..=steps` (entry `T − 1`).
    pub fn t1_average(&self) -> &[RunningStats] {
        &self.t1_average
    }

    /// `F_T` for `T = 0..steps`.
    pub fn t3_functional(&self) -> Option<&[RunningStats]> {
        self.t3_functional.as_deref()
    }

    pub fn t3_rho(&self) -> Option<f64> {
        self.t3_rho
    }
}

/// Comparison of a panel with one theorem's envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub theorem: Theorem,
    pub gamma: f64,
    pub step_cap: f64,
    /// `γ` is within the theorem's step-size cap.
    pub applicable: bool,
    /// Index of the first checked step (`T` for T1 and T3, `t` for T2).
    pub first_step: usize,
    pub bound: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    /// Steps where `mean > bound + 3·std_err`.
    pub violations: usize,
    pub first_violation: Option<usize>,
    /// Asymptotic level of the envelope.
    pub floor: f64,
    pub final_mean: f64,
    pub final_std_err: f64,
    pub floor_ok: bool,
    pub replicas: usize,
    pub diverged: usize,
    pub passed: bool,
}

/// Checks the empirical series against the theorem's envelope at every
/// step, allowing three standard errors.
pub fn envelope_check(
    panel: &GapPanel,
    theorem: Theorem,
    c: &TheoryConstants,
    gamma: f64,
) -> Result<EnvelopeReport> {
    c.validate(theorem)?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(LabError::invalid("gamma", "must be positive and finite"));
    }
    if panel.replicas == 0 {
        return Err(LabError::invalid("panel", "every replica diverged"));
    }
    let g0 = panel.gap[0].mean();
    let (series, first, floor): (&[RunningStats], usize, f64) = match theorem {
        Theorem::T1 => (&panel.t1_average, 1, t1_floor(c, gamma)),
        Theorem::T2 => (&panel.gap, 0, t2_half_xi(c, gamma)),
        Theorem::T3 => {
            let rho = panel
                .t3_rho
                .ok_or_else(|| LabError::invalid("panel", "built without the weighted functional"))?;
            let want = theorem3_rho(gamma, c.mu_g, c.m)?;
            if (rho - want).abs() > 1e-14 * want {
                return Err(LabError::invalid(
                    "panel",
                    format!("weights use rho = {rho}, the constants give {want}"),
                ));
            }
            (
                panel.t3_functional.as_deref().expect("rho implies functional"),
                0,
                t3_xi(c, gamma),
            )
        }
    };
    let d0 = panel.dist.as_ref().map(|d| d[0].mean());
    let bound_at = |t: usize| match theorem {
        Theorem::T1 => t1_envelope(c, gamma, g0, t),
        Theorem::T2 => t2_envelope(c, gamma, g0, t),
        Theorem::T3 => t3_envelope(c, gamma, d0.expect("checked above"), t),
    };
    let mut report = EnvelopeReport {
        theorem,
        gamma,
        step_cap: step_cap(theorem, c),
        applicable: gamma <= step_cap(theorem, c) * (1.0 + 1e-12),
        first_step: first,
        bound: Vec::with_capacity(series.len()),
        mean: Vec::with_capacity(series.len()),
        std_err: Vec::with_capacity(series.len()),
        violations: 0,
        first_violation: None,
        floor,
        final_mean: 0.0,
        final_std_err: 0.0,
        floor_ok: false,
        replicas: panel.replicas,
        diverged: panel.diverged,
        passed: false,
    };
    for (i, s) in series.iter().enumerate() {
        let t = first + i;
        let (b, m, se) = (bound_at(t), s.mean(), s.std_err());
        if m > b + 3.0 * se {
            report.violations += 1;
            report.first_violation.get_or_insert(t);
        }
        report.bound.push(b);
        report.mean.push(m);
        report.std_err.push(se);
    }
    let last = series.last().expect("non-empty series");
    report.final_mean = last.mean();
    report.final_std_err = last.std_err();
    report.floor_ok = report.final_mean <= floor + 3.0 * report.final_std_err;
    report.passed = report.applicable && report.violations == 0 && report.diverged == 0;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::NoiseSpec;
    use crate::smoothing::SmoothingSpec;

    fn quad_consts(sigma2: f64) -> TheoryConstants {
        TheoryConstants {
            l_g: 2.0,
            mu_g: 2.0,
            m_prime: 0.0,
            sigma2,
            m: 0.0,
            delta: 0.0,
        }
    }

    #[test]
    fn gd_on_quadratic_is_inside_all_envelopes() {
        let p = ProblemInstance::quadratic(1).unwrap();
        let gamma = 0.1;
        let cfg = OptimizerConfig::gd(gamma, 100, vec![5.0]);
        let opts = PanelOptions::for_theorem3(gamma, 2.0, 0.0).unwrap();
        let panel = GapPanel::simulate(&p, &cfg, 3, opts).unwrap();
        assert_eq!(panel.replicas(), 3);
        assert_eq!(panel.gap()[0].mean(), 25.0);
        for th in [Theorem::T1, Theorem::T2, Theorem::T3] {
            let r = envelope_check(&panel, th, &quad_consts(0.0), gamma).unwrap();
            assert!(r.passed, "{th:?}: {r:?}");
        }
    }

    #[test]
    fn noisy_sgd_respects_t2() {
        let p = ProblemInstance::quadratic(1).unwrap();
        let gamma = 0.05;
        let cfg = OptimizerConfig::sgd(gamma, 300, vec![5.0], NoiseSpec::Gaussian { variance: 1.0 }, 3);
        let panel = GapPanel::simulate(&p, &cfg, 400, PanelOptions::default()).unwrap();
        let r = envelope_check(&panel, Theorem::T2, &quad_consts(1.0), gamma).unwrap();
        assert!(r.passed && r.floor_ok, "{r:?}");
        // Stationary E x² = γσ²/(4 − 4γ) ≈ 0.013 against ½Ξ = 0.025.
        assert!(r.final_mean > 0.3 * r.floor);
    }

    #[test]
    fn wrong_constants_are_caught() {
        let p = ProblemInstance::quadratic(1).unwrap();
        let gamma = 0.05;
        let cfg = OptimizerConfig::sgd(gamma, 300, vec![5.0], NoiseSpec::Gaussian { variance: 4.0 }, 3);
        let panel = GapPanel::simulate(&p, &cfg, 400, PanelOptions::default()).unwrap();
        let r = envelope_check(&panel, Theorem::T2, &quad_consts(0.0), gamma).unwrap();
        assert!(!r.passed);
        assert!(r.violations > 0);
    }

    #[test]
    fn streamed_matches_recorded() {
        let p = ProblemInstance::toy_sine(10.0, 1.0).unwrap();
        let cfg = OptimizerConfig::perturbed(
            1e-3,
            50,
            vec![3.0],
            SmoothingSpec::IsotropicGaussian { zeta: 2.0 },
            NoiseSpec::None,
            9,
        );
        let opts = PanelOptions::for_theorem3(1e-3, 2.0, 0.5).unwrap();
        let a = GapPanel::simulate(&p, &cfg, 5, opts).unwrap();
        let trs: Vec<Trajectory> = (0..5)
            .map(|r| crate::optimizers::run(&p, &cfg.clone().with_replica(r)).unwrap())
            .collect();
        let b = GapPanel::from_trajectories(&p, &trs, 0.0, opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rho_mismatch_is_rejected() {
        let p = ProblemInstance::quadratic(1).unwrap();
        let cfg = OptimizerConfig::gd(0.1, 10, vec![1.0]);
        let panel = GapPanel::simulate(&p, &cfg, 1, PanelOptions::for_theorem3(0.2, 2.0, 0.0).unwrap()).unwrap();
        assert!(envelope_check(&panel, Theorem::T3, &quad_consts(0.0), 0.1).is_err());
    }
}
