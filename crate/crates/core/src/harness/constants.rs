//! Fitted assumption constants against their closed forms.

use rand::Rng;
use serde_json::json;

use super::config::ExperimentConfig;
use super::convergence::fit_grid;
use super::report::{num, Table, Verdict};
use super::Outcome;
use crate::analysis::{estimate_assumptions, fit_structure_constants, required_intercept, StructureMode};
use crate::error::{LabError, Result};
use crate::problems::{analytic_assumption_constants, NoiseSpec, ProblemInstance};
use crate::rng::{Purpose, StreamKey};

pub(crate) fn run_constants(cfg: &ExperimentConfig) -> Result<Outcome> {
    let seed = cfg.u64("seed");
    let problem = match cfg.str("problem") {
        "valley" => ProblemInstance::valley(cfg.f64("alpha"), cfg.f64("lambda"), cfg.usize("dim"))?,
        _ => ProblemInstance::toy_sine(cfg.f64("a"), cfg.f64("b"))?,
    };
    let (lo, hi, n) = (cfg.f64("fit_lo"), cfg.f64("fit_hi"), cfg.usize("fit_points"));
    let d = problem.dimension();
    let points = if d == 1 {
        fit_grid(lo, hi, n)
    } else {
        (0..n)
            .map(|i| {
                let mut rng = StreamKey::new(seed, i as u64, 0, Purpose::Init).rng();
                (0..d).map(|_| rng.random_range(lo..hi)).collect()
            })
            .collect()
    };
    let nv = cfg.f64("noise_variance");
    let noise = if nv > 0.0 { NoiseSpec::Gaussian { variance: nv } } else { NoiseSpec::None };
    let draws = cfg.usize("fit_draws");

    let mut table = Table::new(
        "constants",
        &[
            "zeta",
            "sigma2",
            "m_prime",
            "delta",
            "m",
            "delta_perp",
            "m_par",
            "analytic_m",
            "analytic_delta",
            "intercept_at_analytic_slope",
            "analytic_violations",
            "feasible",
        ],
    );
    let mut rows = Vec::new();
    let mut all_dominated = true;
    let mut checked = 0;
    let mut total_violations = 0;
    for z in cfg.f64_list("zetas") {
        let est = estimate_assumptions(&problem, z, noise, &points, draws, seed)?;
        let analytic = match analytic_assumption_constants(&problem, z) {
            Ok(c) => Some(c),
            Err(LabError::AssumptionViolated(_)) => None,
            Err(e) => return Err(e),
        };
        let (mut icpt, mut viol) = (String::new(), String::new());
        if let Some(a) = analytic {
            let norm = fit_structure_constants(&problem, z, &points, StructureMode::Norm)?;
            let b: Vec<f64> = norm.points.iter().map(|p| p.grad_g_sq).collect();
            let v: Vec<f64> = norm.points.iter().map(|p| p.r_sq).collect();
            let n_viol = norm.violations_of(a.m, a.delta);
            icpt = num(required_intercept(&b, &v, a.m));
            viol = n_viol.to_string();
            all_dominated &= n_viol == 0;
            total_violations += n_viol;
            checked += 1;
        }
        let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
        table.push(vec![
            num(z),
            num(est.sigma2),
            num(est.m_prime),
            num(est.delta),
            num(est.m),
            num(est.delta_perp),
            num(est.m_par),
            opt(analytic.map(|a| a.m)),
            opt(analytic.map(|a| a.delta)),
            icpt,
            viol,
            est.feasible.to_string(),
        ]);
        rows.push(json!({"zeta": z, "estimate": est, "analytic": analytic}));
    }
    let verdicts = vec![Verdict::new(
        "analytic_envelope_dominates",
        all_dominated,
        format!(
            "{total_violations} sampled residual(s) above the closed-form (m, delta) envelope over {checked} smoothing width(s)"
        ),
    )];
    Ok(Outcome {
        tables: vec![table],
        verdicts,
        summary: json!({"problem": problem.describe(), "points": points.len(), "draws": draws, "rows": rows}),
    })
}
