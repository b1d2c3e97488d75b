//! Pieces shared by several experiment kinds.

use rand::Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::report::{num, trajectory_header, Table};
use crate::analysis::stationary_points_1d;
use crate::error::{LabError, Result};
use crate::optimizers::{run, run_engine, step_grid, GridMode, OptimizerConfig};
use crate::problems::ProblemInstance;
use crate::rng::{Purpose, StreamKey};

pub(crate) fn grid_from(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let mode = match cfg.str("grid_mode") {
        "endpoints" => GridMode::Endpoints,
        _ => GridMode::LogCentered,
    };
    step_grid(cfg.f64("grid_lo"), cfg.f64("grid_hi"), cfg.usize("grid_count"), mode)
}

/// One scalar start per replica, uniform on `[lo, hi)`, from the `Init`
/// stream.
pub(crate) fn uniform_starts(seed: u64, replicas: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..replicas)
        .map(|r| {
            let mut rng = StreamKey::new(seed, r as u64, 0, Purpose::Init).rng();
            vec![rng.random_range(lo..hi)]
        })
        .collect()
}

/// Final iterates for `starts[r]` with replica index `r`; `None` marks a
/// diverged run.
pub(crate) fn final_iterates(
    problem: &ProblemInstance,
    template: &OptimizerConfig,
    starts: &[Vec<f64>],
) -> Result<Vec<Option<Vec<f64>>>> {
    template.validate(problem)?;
    let out: Vec<Option<Vec<f64>>> = starts
        .par_iter()
        .enumerate()
        .map(|(r, x0)| {
            let cfg = template.clone().with_x0(x0.clone()).with_replica(r as u64);
            let s = run_engine(problem, &cfg, |_| {});
            (!s.diverged).then_some(s.last)
        })
        .collect();
    if !out.is_empty() && out.iter().all(Option::is_none) {
        return Err(LabError::InvalidArgument {
            name: "replicas",
            reason: "every replica diverged".into(),
        });
    }
    Ok(out)
}

/// Global minimizers of a one-dimensional `f` over `[lo, hi]`.
pub(crate) fn global_minimizers_1d(problem: &ProblemInstance, lo: f64, hi: f64) -> Result<Vec<f64>> {
    let pts = stationary_points_1d(problem, lo, hi, 10_000, 1e-10)?;
    let fmin = pts
        .iter()
        .map(|p| p.f)
        .fold(f64::INFINITY, f64::min);
    if !fmin.is_finite() {
        return Err(LabError::NotApplicable("no stationary point in the box".into()));
    }
    let tol = 1e-9 * fmin.abs().max(1.0);
    Ok(pts.iter().filter(|p| p.f <= fmin + tol).map(|p| p.x[0]).collect())
}

/// Share of all replicas (diverged ones count as misses) within `radius`
/// of some global minimizer.
pub(crate) fn near_fraction(finals: &[Option<Vec<f64>>], minimizers: &[f64], radius: f64) -> f64 {
    if finals.is_empty() {
        return 0.0;
    }
    let hits = finals
        .iter()
        .flatten()
        .filter(|x| minimizers.iter().any(|m| (x[0] - m).abs() <= radius))
        .count();
    hits as f64 / finals.len() as f64
}

pub(crate) struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Histogram {
    /// Counts with an underflow slot first and an overflow slot last.
    pub fn counts(&self, finals: &[Option<Vec<f64>>]) -> Vec<u64> {
        let mut c = vec![0u64; self.bins + 2];
        let width = (self.hi - self.lo) / self.bins as f64;
        for x in finals.iter().flatten() {
            let v = x[0];
            let slot = if v < self.lo {
                0
            } else if v >= self.hi {
                self.bins + 1
            } else {
                1 + (((v - self.lo) / width) as usize).min(self.bins - 1)
            };
            c[slot] += 1;
        }
        c
    }

    pub fn table(&self, name: String, labels: [&str; 2], a: &[u64], b: &[u64]) -> Table {
        let header = ["bin_lo", "bin_hi", labels[0], labels[1]];
        let mut t = Table::new(name, &header);
        let width = (self.hi - self.lo) / self.bins as f64;
        for slot in 0..self.bins + 2 {
            let (lo, hi) = if slot == 0 {
                (f64::NEG_INFINITY, self.lo)
            } else if slot == self.bins + 1 {
                (self.hi, f64::INFINITY)
            } else {
                let i = (slot - 1) as f64;
                (self.lo + i * width, self.lo + (i + 1.0) * width)
            };
            t.push(vec![num(lo), num(hi), a[slot].to_string(), b[slot].to_string()]);
        }
        t
    }
}

/// Full per-step records for the first `count` replicas of `template`.
pub(crate) fn trajectory_table(
    name: &str,
    problem: &ProblemInstance,
    template: &OptimizerConfig,
    starts: Option<&[Vec<f64>]>,
    count: usize,
) -> Result<Table> {
    let mut t = Table::with_header(name, trajectory_header(problem.dimension()));
    for r in 0..count {
        let mut cfg = template.clone().with_replica(r as u64);
        if let Some(s) = starts {
            match s.get(r) {
                Some(x0) => cfg = cfg.with_x0(x0.clone()),
                None => break,
            }
        }
        let tr = run(problem, &cfg)?;
        for step in 0..=tr.len() {
            let mut row = vec![step.to_string(), r.to_string()];
            row.extend(tr.iterate(step).iter().map(|v| num(*v)));
            row.push(num(tr.f_values()[step]));
            row.push(num(tr.g_values()[step]));
            row.push(num(tr.grad_g_sq()[step]));
            row.push(tr.g_gap().map(|g| num(g[step])).unwrap_or_default());
            t.push(row);
        }
    }
    Ok(t)
}

/// Label used in table names for a smoothing width.
pub(crate) fn zeta_label(z: f64) -> String {
    format!("{z}")
}
