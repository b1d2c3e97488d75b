//! Mean equivalence between the SGD shadow sequence `y_t` and noiseless
//! perturbed GD `z_t` under the coupled perturbation law.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::optimizers::{
    reference_g_star, run_engine, theorem3_weights, Algorithm, OptimizerConfig,
};
use crate::problems::{NoiseSpec, Part, ProblemInstance};
use crate::smoothing::SmoothingSpec;
use crate::stats::{two_sample_half_width, RunningStats};
use crate::vecops::norm_sq;

/// Perturbation law whose draws match `γ·w` for SGD noise `w`: Gaussian
/// noise of variance `σ²` per coordinate gives total variance `γ²σ²d`, and
/// component sampling gives the full-batch difference.
pub fn coupled_smoothing(problem: &ProblemInstance, gamma: f64, noise: NoiseSpec) -> Result<SmoothingSpec> {
    noise.validate(problem)?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(LabError::invalid("gamma", "must be positive and finite"));
    }
    Ok(match noise {
        NoiseSpec::None => SmoothingSpec::None,
        NoiseSpec::Gaussian { variance } => SmoothingSpec::IsotropicGaussian {
            zeta: gamma * (variance * problem.dimension() as f64).sqrt(),
        },
        NoiseSpec::SingleIndex => SmoothingSpec::FullBatchDifference { gamma },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceStep {
    pub step: usize,
    pub coord: usize,
    pub mean_y: f64,
    pub sd_y: f64,
    pub mean_z: f64,
    pub sd_z: f64,
    pub diff: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl EquivalenceStep {
    /// Zero lies in the confidence interval of the difference.
    pub fn within(&self) -> bool {
        self.ci_lo <= 0.0 && 0.0 <= self.ci_hi
    }
}

/// `g(ȳ_T) − g* ≤ (1/W_T) Σ w_t (g(z_t) − g*)` with `ȳ_T = Σ w_t E[y_t] / W_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma4Check {
    pub lhs: f64,
    pub rhs: f64,
    pub rhs_std_err: f64,
    pub lhs_std_err: f64,
    pub allowance: f64,
    /// `"weighted"` when `μ_g` is known, otherwise `"uniform"`.
    pub weights: String,
    pub g_star: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub gamma: f64,
    pub steps: usize,
    pub level: f64,
    pub smoothing: SmoothingSpec,
    pub replicas: usize,
    pub diverged: usize,
    /// One row per `(step, coord)`, step-major, `step = 0..=T`.
    pub rows: Vec<EquivalenceStep>,
    /// Fraction of rows with `step ≥ 1` whose interval contains zero.
    pub pass_fraction: f64,
    pub lemma4: Lemma4Check,
}

pub const EQUIVALENCE_LEVEL: f64 = 0.99;

/// Runs SGD (recording `y_t = x_{t−1} − γ∇f(x_{t−1})`, `y_0 = x_0`) and
/// noiseless perturbed GD from the same `x_0`, each with `replicas`
/// independent streams, and compares their per-step means.
#[allow(clippy::too_many_arguments)]
pub fn equivalence_report(
    problem: &ProblemInstance,
    gamma: f64,
    steps: usize,
    x0: &[f64],
    noise: NoiseSpec,
    replicas: usize,
    seed: u64,
    smoothing: Option<SmoothingSpec>,
    g_star: Option<f64>,
) -> Result<EquivalenceReport> {
    if replicas < 2 {
        return Err(LabError::invalid("replicas", "need at least two"));
    }
    let smoothing = match smoothing {
        Some(s) => s,
        None => coupled_smoothing(problem, gamma, noise)?,
    };
    let sgd = OptimizerConfig::sgd(gamma, steps, x0.to_vec(), noise, seed);
    sgd.validate(problem)?;
    let mut psgd = OptimizerConfig::perturbed(gamma, steps, x0.to_vec(), smoothing, NoiseSpec::None, seed);
    psgd.validate(problem)?;
    debug_assert_eq!(psgd.algorithm, Algorithm::PerturbedSgd);
    psgd.g_star = None;

    let g_star = match g_star {
        Some(v) => v,
        None => reference_g_star(problem)?.value,
    };
    let weights: Vec<f64> = match problem.constants().mu_g {
        Some(mu) => theorem3_weights(gamma, mu, 0.0, steps)?.weights,
        None => vec![1.0 / (steps + 1) as f64; steps + 1],
    };
    let weight_kind = if problem.constants().mu_g.is_some() { "weighted" } else { "uniform" };

    let d = problem.dimension();
    let mut ys = vec![RunningStats::new(); (steps + 1) * d];
    let mut zs = vec![RunningStats::new(); (steps + 1) * d];
    let mut ybar = vec![RunningStats::new(); d];
    let mut rhs = RunningStats::new();
    let mut diverged = 0;

    struct Pair {
        y: Vec<f64>,
        z: Vec<f64>,
        ok: bool,
    }
    super::map_ordered(
        replicas,
        |r| {
            let mut y = Vec::with_capacity((steps + 1) * d);
            y.extend_from_slice(x0);
            let a = run_engine(problem, &sgd.clone().with_replica(r as u64), |v| {
                if let Some((yy, _)) = v.shadow {
                    y.extend_from_slice(yy);
                }
            });
            let mut z = Vec::with_capacity((steps + 1) * d);
            let b = run_engine(problem, &psgd.clone().with_replica(r as u64), |v| {
                z.extend_from_slice(v.x)
            });
            Pair {
                y,
                z,
                ok: !a.diverged && !b.diverged,
            }
        },
        |_, p| {
            if !p.ok {
                diverged += 1;
                return;
            }
            for (acc, v) in ys.iter_mut().zip(&p.y) {
                acc.push(*v);
            }
            for (acc, v) in zs.iter_mut().zip(&p.z) {
                acc.push(*v);
            }
            let mut yw = vec![0.0; d];
            let mut fz = 0.0;
            for (t, w) in weights.iter().enumerate() {
                let zt = &p.z[t * d..(t + 1) * d];
                fz += w * (problem.value_unchecked(Part::G, zt) - g_star);
                for (acc, yv) in yw.iter_mut().zip(&p.y[t * d..(t + 1) * d]) {
                    *acc += w * yv;
                }
            }
            rhs.push(fz);
            for (acc, v) in ybar.iter_mut().zip(&yw) {
                acc.push(*v);
            }
        },
    );
    let used = replicas - diverged;
    if used < 2 {
        return Err(LabError::invalid("replicas", "fewer than two replicas stayed finite"));
    }

    let mut rows = Vec::with_capacity((steps + 1) * d);
    let mut within = 0usize;
    for t in 0..=steps {
        for j in 0..d {
            let (a, b) = (&ys[t * d + j], &zs[t * d + j]);
            let diff = a.mean() - b.mean();
            let half = two_sample_half_width(a, b, EQUIVALENCE_LEVEL);
            let row = EquivalenceStep {
                step: t,
                coord: j,
                mean_y: a.mean(),
                sd_y: a.std_dev(),
                mean_z: b.mean(),
                sd_z: b.std_dev(),
                diff,
                ci_lo: diff - half,
                ci_hi: diff + half,
            };
            if t >= 1 && row.within() {
                within += 1;
            }
            rows.push(row);
        }
    }
    let checked = steps * d;
    let pass_fraction = if checked == 0 { 1.0 } else { within as f64 / checked as f64 };

    let y_mean: Vec<f64> = ybar.iter().map(RunningStats::mean).collect();
    let y_se = ybar.iter().map(|s| s.std_err().powi(2)).sum::<f64>().sqrt();
    let grad = problem.gradient(Part::G, &y_mean)?;
    let lhs = problem.value(Part::G, &y_mean)? - g_star;
    let lhs_se = norm_sq(&grad).sqrt() * y_se;
    let allowance = 3.0 * (rhs.std_err() + lhs_se);
    let lemma4 = Lemma4Check {
        lhs,
        rhs: rhs.mean(),
        rhs_std_err: rhs.std_err(),
        lhs_std_err: lhs_se,
        allowance,
        weights: weight_kind.to_string(),
        g_star,
        holds: lhs <= rhs.mean() + allowance,
    };

    Ok(EquivalenceReport {
        gamma,
        steps,
        level: EQUIVALENCE_LEVEL,
        smoothing,
        replicas: used,
        diverged,
        rows,
        pass_fraction,
        lemma4,
    })
}
