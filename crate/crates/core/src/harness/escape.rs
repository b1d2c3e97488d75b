//! Escape from local minima on the sine-perturbed quadratic, and the
//! matched-noise sweep against SGD.

use serde_json::json;

use super::common::{
    final_iterates, global_minimizers_1d, grid_from, near_fraction, trajectory_table, uniform_starts,
    zeta_label, Histogram,
};
use super::config::ExperimentConfig;
use super::report::{num, Table, Verdict};
use super::Outcome;
use crate::error::Result;
use crate::optimizers::{grid_search_stepsize_from, OptimizerConfig, SearchCriterion};
use crate::problems::{NoiseSpec, ProblemInstance};
use crate::smoothing::SmoothingSpec;
use crate::stats::RunningStats;

struct Arm {
    label: String,
    zeta: f64,
    gamma: f64,
    finals: Vec<Option<Vec<f64>>>,
    near: f64,
}

fn choose_gamma(
    problem: &ProblemInstance,
    template: &OptimizerConfig,
    fixed: Option<f64>,
    grid: &[f64],
    starts: &[Vec<f64>],
    label: &str,
    scores: &mut Table,
) -> Result<f64> {
    if let Some(g) = fixed {
        return Ok(g);
    }
    let outcome = grid_search_stepsize_from(problem, template, grid, SearchCriterion::FinalF, starts, None)?;
    for (g, s) in &outcome.scores {
        scores.push(vec![
            label.to_string(),
            num(*g),
            s.map(num).unwrap_or_default(),
            (*g == outcome.gamma).to_string(),
        ]);
    }
    Ok(outcome.gamma)
}

fn spread(finals: &[Option<Vec<f64>>]) -> f64 {
    finals.iter().flatten().map(|x| x[0]).collect::<RunningStats>().std_dev()
}

pub(crate) fn run_escape(cfg: &ExperimentConfig) -> Result<Outcome> {
    let problem = ProblemInstance::toy_sine(cfg.f64("a"), cfg.f64("b"))?;
    let seed = cfg.u64("seed");
    let steps = cfg.usize("steps");
    let starts = uniform_starts(seed, cfg.usize("replicas"), cfg.f64("x0_lo"), cfg.f64("x0_hi"));
    let grid = grid_from(cfg)?;
    let fixed = cfg.opt_f64("gamma");
    let nv = cfg.f64("noise_variance");
    let noise = if nv > 0.0 { NoiseSpec::Gaussian { variance: nv } } else { NoiseSpec::None };
    let hist = Histogram {
        lo: cfg.f64("hist_lo"),
        hi: cfg.f64("hist_hi"),
        bins: cfg.usize("hist_bins"),
    };
    let radius = cfg.f64("radius");
    let minimizers = global_minimizers_1d(&problem, hist.lo, hist.hi)?;
    let n_traj = cfg.usize("trajectory_replicas");
    let mut zetas = cfg.f64_list("zetas");
    zetas.sort_by(f64::total_cmp);
    let margin = cfg.f64("margin");

    let mut scores = Table::new("grid_search", &["algorithm", "gamma", "mean_final_f", "selected"]);
    let mut tables = Vec::new();
    let x_any = starts.first().cloned().unwrap_or_else(|| vec![0.0]);

    let base_tpl = if noise.is_none() {
        OptimizerConfig::gd(1.0, steps, x_any.clone())
    } else {
        OptimizerConfig::sgd(1.0, steps, x_any.clone(), noise, seed)
    };
    let base_gamma = choose_gamma(&problem, &base_tpl, fixed, &grid, &starts, "gd", &mut scores)?;
    let base_tpl = base_tpl.with_gamma(base_gamma);
    let base_finals = final_iterates(&problem, &base_tpl, &starts)?;
    let base = Arm {
        label: "gd".into(),
        zeta: 0.0,
        gamma: base_gamma,
        near: near_fraction(&base_finals, &minimizers, radius),
        finals: base_finals,
    };
    if n_traj > 0 {
        tables.push(trajectory_table("trajectories_gd", &problem, &base_tpl, Some(&starts), n_traj)?);
    }

    let mut arms = Vec::new();
    for &z in &zetas {
        let label = format!("psgd_zeta_{}", zeta_label(z));
        let tpl = OptimizerConfig::perturbed(1.0, steps, x_any.clone(), SmoothingSpec::IsotropicGaussian { zeta: z }, noise, seed);
        let gamma = choose_gamma(&problem, &tpl, fixed, &grid, &starts, &label, &mut scores)?;
        let tpl = tpl.with_gamma(gamma);
        let finals = final_iterates(&problem, &tpl, &starts)?;
        if n_traj > 0 {
            tables.push(trajectory_table(&format!("trajectories_{label}"), &problem, &tpl, Some(&starts), n_traj)?);
        }
        arms.push(Arm {
            label,
            zeta: z,
            gamma,
            near: near_fraction(&finals, &minimizers, radius),
            finals,
        });
    }

    let base_counts = hist.counts(&base.finals);
    for arm in &arms {
        let c = hist.counts(&arm.finals);
        tables.push(hist.table(
            format!("histogram_zeta_{}", zeta_label(arm.zeta)),
            ["count_gd", "count_psgd"],
            &base_counts,
            &c,
        ));
    }

    let mut last = {
        let mut h = vec!["replica".to_string(), "x0".to_string(), "gd".to_string()];
        h.extend(arms.iter().map(|a| a.label.clone()));
        Table::with_header("last_iterates", h)
    };
    for (r, x0) in starts.iter().enumerate() {
        let cell = |f: &Option<Vec<f64>>| f.as_ref().map(|x| num(x[0])).unwrap_or_else(|| "diverged".into());
        let mut row = vec![r.to_string(), num(x0[0]), cell(&base.finals[r])];
        row.extend(arms.iter().map(|a| cell(&a.finals[r])));
        last.push(row);
    }

    let mut summary_t = Table::new(
        "escape_summary",
        &["algorithm", "zeta", "gamma", "near_global_fraction", "spread", "diverged"],
    );
    for a in std::iter::once(&base).chain(&arms) {
        summary_t.push(vec![
            a.label.clone(),
            num(a.zeta),
            num(a.gamma),
            num(a.near),
            num(spread(&a.finals)),
            a.finals.iter().filter(|f| f.is_none()).count().to_string(),
        ]);
    }

    let mut verdicts = Vec::new();
    if let Some(top) = arms.last() {
        verdicts.push(Verdict::new(
            "psgd_beats_gd",
            top.near - base.near >= margin,
            format!(
                "near-global fraction {} at zeta {} vs {} for gd (margin {margin})",
                top.near, top.zeta, base.near
            ),
        ));
    }
    if arms.len() >= 2 {
        let mono = arms.windows(2).all(|w| w[1].near >= w[0].near);
        let fr: Vec<String> = arms.iter().map(|a| format!("{}:{}", a.zeta, a.near)).collect();
        verdicts.push(Verdict::new("monotone_in_zeta", mono, fr.join(", ")));
    }

    let summary = json!({
        "global_minimizers": minimizers,
        "gd": {"gamma": base.gamma, "near_global_fraction": base.near},
        "psgd": arms.iter().map(|a| json!({"zeta": a.zeta, "gamma": a.gamma, "near_global_fraction": a.near})).collect::<Vec<_>>(),
    });
    tables.insert(0, summary_t);
    tables.insert(1, last);
    tables.push(scores);
    Ok(Outcome { tables, verdicts, summary })
}

pub(crate) fn run_noise_sweep(cfg: &ExperimentConfig) -> Result<Outcome> {
    let problem = ProblemInstance::toy_sine(cfg.f64("a"), cfg.f64("b"))?;
    let seed = cfg.u64("seed");
    let steps = cfg.usize("steps");
    let starts = uniform_starts(seed, cfg.usize("replicas"), cfg.f64("x0_lo"), cfg.f64("x0_hi"));
    let grid = grid_from(cfg)?;
    let fixed = cfg.opt_f64("gamma");
    let hist = Histogram {
        lo: cfg.f64("hist_lo"),
        hi: cfg.f64("hist_hi"),
        bins: cfg.usize("hist_bins"),
    };
    let radius = cfg.f64("radius");
    let minimizers = global_minimizers_1d(&problem, hist.lo, hist.hi)?;
    let n_traj = cfg.usize("trajectory_replicas");
    let mut zetas = cfg.f64_list("zetas");
    zetas.sort_by(f64::total_cmp);
    let x_any = starts.first().cloned().unwrap_or_else(|| vec![0.0]);

    let mut scores = Table::new("grid_search", &["algorithm", "gamma", "mean_final_f", "selected"]);
    let mut summary_t = Table::new(
        "sweep_summary",
        &[
            "zeta",
            "gamma",
            "noise_variance",
            "near_sgd",
            "near_psgd",
            "spread_sgd",
            "spread_psgd",
            "diverged_sgd",
            "diverged_psgd",
        ],
    );
    let mut tables = Vec::new();
    let mut rows = Vec::new();
    for &z in &zetas {
        let label = zeta_label(z);
        let ptpl = OptimizerConfig::perturbed(1.0, steps, x_any.clone(), SmoothingSpec::IsotropicGaussian { zeta: z }, NoiseSpec::None, seed);
        let gamma = choose_gamma(&problem, &ptpl, fixed, &grid, &starts, &format!("psgd_zeta_{label}"), &mut scores)?;
        let ptpl = ptpl.with_gamma(gamma);
        let variance = gamma * z * z;
        let noise = if variance > 0.0 { NoiseSpec::Gaussian { variance } } else { NoiseSpec::None };
        let stpl = OptimizerConfig::sgd(gamma, steps, x_any.clone(), noise, seed);
        let pf = final_iterates(&problem, &ptpl, &starts)?;
        let sf = final_iterates(&problem, &stpl, &starts)?;
        tables.push(hist.table(
            format!("histogram_zeta_{label}"),
            ["count_sgd", "count_psgd"],
            &hist.counts(&sf),
            &hist.counts(&pf),
        ));
        if n_traj > 0 {
            tables.push(trajectory_table(&format!("trajectories_sgd_zeta_{label}"), &problem, &stpl, Some(&starts), n_traj)?);
            tables.push(trajectory_table(&format!("trajectories_psgd_zeta_{label}"), &problem, &ptpl, Some(&starts), n_traj)?);
        }
        let (ns, np) = (near_fraction(&sf, &minimizers, radius), near_fraction(&pf, &minimizers, radius));
        summary_t.push(vec![
            num(z),
            num(gamma),
            num(variance),
            num(ns),
            num(np),
            num(spread(&sf)),
            num(spread(&pf)),
            sf.iter().filter(|f| f.is_none()).count().to_string(),
            pf.iter().filter(|f| f.is_none()).count().to_string(),
        ]);
        rows.push(json!({"zeta": z, "gamma": gamma, "noise_variance": variance, "near_sgd": ns, "near_psgd": np}));
    }
    tables.insert(0, summary_t);
    tables.push(scores);
    Ok(Outcome {
        tables,
        verdicts: Vec::new(),
        summary: json!({"global_minimizers": minimizers, "sweep": rows}),
    })
}
