//! Envelope checks of the three convergence theorems on the sine-perturbed
//! quadratic.

use serde_json::json;

use super::common::trajectory_table;
use super::config::ExperimentConfig;
use super::report::{num, Table, Verdict};
use super::Outcome;
use crate::analysis::{
    envelope_check, fit_noise_constants, fit_structure_constants, iteration_bound, GapPanel,
    PanelOptions, StructureMode,
};
use crate::error::Result;
use crate::optimizers::{theoretical_stepsize, OptimizerConfig, Theorem, TheoryConstants};
use crate::problems::{analytic_assumption_constants, NoiseSpec, ProblemInstance};
use crate::smoothing::SmoothingSpec;

pub(crate) fn fit_grid(lo: f64, hi: f64, n: usize) -> Vec<Vec<f64>> {
    if n == 1 {
        return vec![vec![0.5 * (lo + hi)]];
    }
    (0..n)
        .map(|i| vec![lo + (hi - lo) * i as f64 / (n - 1) as f64])
        .collect()
}

pub(crate) fn run_convergence(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (a, b) = (cfg.f64("a"), cfg.f64("b"));
    let problem = ProblemInstance::toy_sine(a, b)?;
    let seed = cfg.u64("seed");
    let zeta = cfg.f64("zeta");
    let theorem = Theorem::from_index(cfg.u64("theorem") as u32).expect("validated");
    let nv = cfg.f64("noise_variance");
    let noise = if nv > 0.0 { NoiseSpec::Gaussian { variance: nv } } else { NoiseSpec::None };
    let smoothing = SmoothingSpec::IsotropicGaussian { zeta };
    let points = fit_grid(cfg.f64("fit_lo"), cfg.f64("fit_hi"), cfg.usize("fit_points"));

    let (m, delta, structure_source) = match (cfg.opt_f64("m"), cfg.opt_f64("delta")) {
        (Some(m), Some(d)) => (m, d, "config"),
        (m_cfg, d_cfg) => {
            let (m, d, src) = if theorem == Theorem::T3 {
                let fit = fit_structure_constants(&problem, zeta, &points, StructureMode::Directional)?;
                let (m, d) = fit.constants();
                (m, d, "directional fit")
            } else {
                let c = analytic_assumption_constants(&problem, zeta)?;
                (c.m, c.delta, "analytic")
            };
            (m_cfg.unwrap_or(m), d_cfg.unwrap_or(d), src)
        }
    };

    let mut cloud = Table::new("noise_fit", &["x", "b", "v", "v_se"]);
    let (sigma2, m_prime) = match (cfg.opt_f64("sigma2"), cfg.opt_f64("m_prime")) {
        (Some(s), Some(mp)) => (s, mp),
        (s_cfg, mp_cfg) => {
            let fit = fit_noise_constants(&problem, &smoothing, noise, &points, cfg.usize("fit_draws"), seed)?;
            for (x, p) in points.iter().zip(&fit.points) {
                cloud.push(vec![num(x[0]), num(p.b), num(p.v), num(p.v_se)]);
            }
            (s_cfg.unwrap_or(fit.sigma2), mp_cfg.unwrap_or(fit.m_prime))
        }
    };
    let c = TheoryConstants {
        l_g: 2.0,
        mu_g: 2.0,
        m_prime,
        sigma2,
        m,
        delta,
    };
    let eps = cfg.f64("epsilon");
    let gamma = match cfg.opt_f64("gamma") {
        Some(g) => g,
        None => theoretical_stepsize(theorem, &c, eps)?,
    };

    let x0 = cfg.f64("x0");
    let steps = cfg.usize("steps");
    let template = OptimizerConfig::perturbed(gamma, steps, vec![x0], smoothing, noise, seed);
    let options = if theorem == Theorem::T3 {
        PanelOptions::for_theorem3(gamma, c.mu_g, c.m)?
    } else {
        PanelOptions::default()
    };
    let panel = GapPanel::simulate(&problem, &template, cfg.usize("replicas"), options)?;
    let report = envelope_check(&panel, theorem, &c, gamma)?;
    // For g = x², both G_0 and d_0 equal x0².
    let initial = x0 * x0;
    let bound = iteration_bound(theorem, &c, eps, initial)?;

    let mut env = Table::new("envelope", &["step", "mean", "std_err", "bound"]);
    for (i, ((mean, se), bd)) in report.mean.iter().zip(&report.std_err).zip(&report.bound).enumerate() {
        env.push(vec![(report.first_step + i).to_string(), num(*mean), num(*se), num(*bd)]);
    }
    let mut gaps = Table::new("gap", &["step", "mean_gap", "std_err_gap", "mean_dist_sq"]);
    let dist = panel.dist();
    for (t, g) in panel.gap().iter().enumerate() {
        let dm = dist.map(|d| num(d[t].mean())).unwrap_or_default();
        gaps.push(vec![t.to_string(), num(g.mean()), num(g.std_err()), dm]);
    }

    let mut tables = vec![env, gaps];
    if !cloud.rows.is_empty() {
        tables.push(cloud);
    }
    let n_traj = cfg.usize("trajectory_replicas");
    if n_traj > 0 {
        tables.push(trajectory_table("trajectories", &problem, &template, None, n_traj)?);
    }

    let mut verdicts = vec![Verdict::new(
        "envelope",
        report.passed,
        format!(
            "{} violation(s) over {} steps, {} diverged, gamma {} (cap {})",
            report.violations,
            report.mean.len(),
            report.diverged,
            gamma,
            report.step_cap
        ),
    )];
    if theorem == Theorem::T2 {
        verdicts.push(Verdict::new(
            "noise_floor",
            report.floor_ok,
            format!(
                "final mean gap {} +- {} vs half Xi {}",
                report.final_mean, report.final_std_err, report.floor
            ),
        ));
    }
    let last_gap = panel.gap().last().map(|g| g.mean()).unwrap_or(f64::NAN);
    let summary = json!({
        "theorem": theorem.index(),
        "gamma": gamma,
        "constants": c,
        "structure_source": structure_source,
        "iteration_bound": bound,
        "floor": report.floor,
        "final_functional_mean": report.final_mean,
        "final_functional_std_err": report.final_std_err,
        "last_iterate_mean_gap": last_gap,
        "violations": report.violations,
        "first_violation": report.first_violation,
        "replicas_used": report.replicas,
        "diverged": report.diverged,
    });
    Ok(Outcome { tables, verdicts, summary })
}
