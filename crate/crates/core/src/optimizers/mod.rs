//! GD, SGD and perturbed SGD with trajectory recording.
//!
//! All three algorithms share one update loop:
//!
//! ```text
//! u_t ~ U(x_t)                      (perturbed SGD only)
//! x_{t+1} = x_t − γ ∇f(x_t − u_t, ξ_t)
//! ```
//!
//! SGD is the case `u_t ≡ 0` and additionally records the shadow sequence
//! `y_{t+1} = x_t − γ∇f(x_t)` and the realized noise `w_t = ∇f(x_t) − ∇f(x_t, ξ_t)`.
//! GD is the case without noise or smoothing.

mod stepsize;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::problems::{stochastic_grad_into, NoiseSpec, Part, ProblemInstance};
use crate::rng::{Purpose, StreamKey};
use crate::smoothing::SmoothingSpec;
use crate::vecops::norm_sq;

pub use stepsize::{
    grid_search_stepsize, grid_search_stepsize_from, reference_g_star, step_grid,
    theorem3_rho, theorem3_weights, theoretical_stepsize, weighted_gap_functional, GReference, GridMode,
    GridSearchOutcome, SearchCriterion, Theorem, Theorem3Weights, TheoryConstants,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Gd,
    Sgd,
    PerturbedSgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub steps: usize,
    pub x0: Vec<f64>,
    pub smoothing: SmoothingSpec,
    pub noise: NoiseSpec,
    pub seed: u64,
    /// Replica index; selects the random streams together with `seed`.
    pub replica: u64,
    /// Minimum of `g` used for the gap `G_t` when the problem does not know
    /// its minimizer.
    pub g_star: Option<f64>,
}

impl OptimizerConfig {
    pub fn gd(gamma: f64, steps: usize, x0: Vec<f64>) -> Self {
        Self {
            algorithm: Algorithm::Gd,
            gamma,
            steps,
            x0,
            smoothing: SmoothingSpec::None,
            noise: NoiseSpec::None,
            seed: 0,
            replica: 0,
            g_star: None,
        }
    }

    pub fn sgd(gamma: f64, steps: usize, x0: Vec<f64>, noise: NoiseSpec, seed: u64) -> Self {
        Self {
            algorithm: Algorithm::Sgd,
            noise,
            seed,
            ..Self::gd(gamma, steps, x0)
        }
    }

    pub fn perturbed(
        gamma: f64,
        steps: usize,
        x0: Vec<f64>,
        smoothing: SmoothingSpec,
        noise: NoiseSpec,
        seed: u64,
    ) -> Self {
        Self {
            algorithm: Algorithm::PerturbedSgd,
            smoothing,
            noise,
            seed,
            ..Self::gd(gamma, steps, x0)
        }
    }

    pub fn with_replica(mut self, replica: u64) -> Self {
        self.replica = replica;
        self
    }

    pub fn with_x0(mut self, x0: Vec<f64>) -> Self {
        self.x0 = x0;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self, problem: &ProblemInstance) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(LabError::invalid("gamma", "must be positive and finite"));
        }
        if self.steps == 0 {
            return Err(LabError::invalid("steps", "must be at least 1"));
        }
        problem.check_point(&self.x0)?;
        match self.algorithm {
            Algorithm::Gd => {
                if self.smoothing != SmoothingSpec::None || self.noise != NoiseSpec::None {
                    return Err(LabError::invalid(
                        "algorithm",
                        "GD carries neither noise nor smoothing",
                    ));
                }
            }
            Algorithm::Sgd => {
                if self.smoothing != SmoothingSpec::None {
                    return Err(LabError::invalid("smoothing", "SGD does not smooth"));
                }
            }
            Algorithm::PerturbedSgd => {}
        }
        self.noise.validate(problem)?;
        self.smoothing.validate(problem)?;
        if let Some(g) = self.g_star {
            if !g.is_finite() {
                return Err(LabError::invalid("g_star", "must be finite"));
            }
        }
        Ok(())
    }
}

/// Iterate record of one run. Vectors are stored flat, row `t` at
/// `t*dim..(t+1)*dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    gamma: f64,
    iterates: Vec<f64>,
    /// `y_1..y_T` (SGD only).
    alternate: Option<Vec<f64>>,
    /// `w_0..w_{T−1}` (SGD only).
    noise: Option<Vec<f64>>,
    f_values: Vec<f64>,
    g_values: Vec<f64>,
    grad_g_sq: Vec<f64>,
    g_gap: Option<Vec<f64>>,
    diverged: bool,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Number of completed steps; iterates `x_0..x_len` are recorded.
    pub fn len(&self) -> usize {
        self.f_values.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    pub fn iterate(&self, t: usize) -> &[f64] {
        &self.iterates[t * self.dim..(t + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.iterate(self.len())
    }

    /// `y_t` for `t ≥ 1`.
    pub fn alternate(&self, t: usize) -> Option<&[f64]> {
        assert!(t >= 1, "the shadow sequence starts at t = 1");
        self.alternate
            .as_ref()
            .map(|y| &y[(t - 1) * self.dim..t * self.dim])
    }

    /// Realized noise `w_t`.
    pub fn noise(&self, t: usize) -> Option<&[f64]> {
        self.noise
            .as_ref()
            .map(|w| &w[t * self.dim..(t + 1) * self.dim])
    }

    pub fn f_values(&self) -> &[f64] {
        &self.f_values
    }

    pub fn g_values(&self) -> &[f64] {
        &self.g_values
    }

    pub fn grad_g_sq(&self) -> &[f64] {
        &self.grad_g_sq
    }

    pub fn g_gap(&self) -> Option<&[f64]> {
        self.g_gap.as_deref()
    }
}

/// Iterates beyond this magnitude (or non-finite) count as divergence, so
/// every recorded value stays finite.
pub const DIVERGENCE_BOUND: f64 = 1e100;

/// What the engine hands to an observer after each accepted iterate.
pub(crate) struct StepView<'a> {
    pub t: usize,
    pub x: &'a [f64],
    /// `(y_t, w_{t−1})` for SGD, `t ≥ 1`.
    pub shadow: Option<(&'a [f64], &'a [f64])>,
}

/// Outcome of a streamed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub last: Vec<f64>,
    pub steps_completed: usize,
    pub diverged: bool,
}

/// Runs the shared update loop, calling `observe` for `x_0` and every
/// accepted iterate. Assumes `config` was validated.
pub(crate) fn run_engine<F>(problem: &ProblemInstance, config: &OptimizerConfig, mut observe: F) -> RunSummary
where
    F: FnMut(StepView<'_>),
{
    let d = problem.dimension();
    let gamma = config.gamma;
    let mut x = config.x0.clone();
    let mut query = vec![0.0; d];
    let mut u = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut full = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut w = vec![0.0; d];
    let record_shadow = config.algorithm == Algorithm::Sgd;
    let smooth = config.algorithm == Algorithm::PerturbedSgd && config.smoothing != SmoothingSpec::None;
    let key = StreamKey::new(config.seed, config.replica, 0, Purpose::Noise);

    observe(StepView {
        t: 0,
        x: &x,
        shadow: None,
    });
    for t in 0..config.steps {
        let step_key = key.with_step(t as u64);
        let point: &[f64] = if smooth {
            let mut rng = step_key.with_purpose(Purpose::Smoothing).rng();
            config
                .smoothing
                .sample_into(problem, &x, &mut rng, &mut u, &mut scratch);
            for ((q, xi), ui) in query.iter_mut().zip(&x).zip(&u) {
                *q = xi - ui;
            }
            &query
        } else {
            &x
        };
        match config.algorithm {
            Algorithm::Gd => problem.grad_into(Part::F, point, &mut grad),
            Algorithm::Sgd | Algorithm::PerturbedSgd => {
                let mut rng = step_key.rng();
                stochastic_grad_into(problem, point, &mut rng, config.noise, &mut grad);
            }
        }
        if record_shadow {
            problem.grad_into(Part::F, &x, &mut full);
            for i in 0..d {
                y[i] = x[i] - gamma * full[i];
                w[i] = full[i] - grad[i];
            }
        }
        for (xi, gi) in x.iter_mut().zip(&grad) {
            *xi -= gamma * gi;
        }
        if x.iter().any(|v| v.is_nan() || v.abs() > DIVERGENCE_BOUND) {
            return RunSummary {
                last: x,
                steps_completed: t,
                diverged: true,
            };
        }
        observe(StepView {
            t: t + 1,
            x: &x,
            shadow: record_shadow.then_some((&y[..], &w[..])),
        });
    }
    RunSummary {
        last: x,
        steps_completed: config.steps,
        diverged: false,
    }
}

/// Gap reference `g*` for `G_t = g(x_t) − g*`, if one is known.
pub(crate) fn gap_reference(problem: &ProblemInstance, config: &OptimizerConfig) -> Option<f64> {
    if let Some(x) = &problem.constants().x_g_star {
        return Some(problem.value_unchecked(Part::G, x));
    }
    config.g_star
}

/// Runs one optimizer and records every step. A non-finite iterate stops the
/// run and sets [`Trajectory::diverged`]; it is never an error.
pub fn run(problem: &ProblemInstance, config: &OptimizerConfig) -> Result<Trajectory> {
    config.validate(problem)?;
    let d = problem.dimension();
    let t_max = config.steps;
    let g_star = gap_reference(problem, config);
    let sgd = config.algorithm == Algorithm::Sgd;
    let mut traj = Trajectory {
        dim: d,
        gamma: config.gamma,
        iterates: Vec::with_capacity((t_max + 1) * d),
        alternate: sgd.then(|| Vec::with_capacity(t_max * d)),
        noise: sgd.then(|| Vec::with_capacity(t_max * d)),
        f_values: Vec::with_capacity(t_max + 1),
        g_values: Vec::with_capacity(t_max + 1),
        grad_g_sq: Vec::with_capacity(t_max + 1),
        g_gap: g_star.map(|_| Vec::with_capacity(t_max + 1)),
        diverged: false,
    };
    let mut gg = vec![0.0; d];
    let summary = run_engine(problem, config, |view| {
        let g = problem.value_unchecked(Part::G, view.x);
        let h = problem.value_unchecked(Part::H, view.x);
        problem.grad_into(Part::G, view.x, &mut gg);
        traj.iterates.extend_from_slice(view.x);
        traj.f_values.push(g + h);
        traj.g_values.push(g);
        traj.grad_g_sq.push(norm_sq(&gg));
        if let (Some(gap), Some(star)) = (traj.g_gap.as_mut(), g_star) {
            gap.push(g - star);
        }
        if let Some((y, w)) = view.shadow {
            traj.alternate.as_mut().expect("sgd").extend_from_slice(y);
            traj.noise.as_mut().expect("sgd").extend_from_slice(w);
        }
    });
    traj.diverged = summary.diverged;
    Ok(traj)
}

/// Runs without recording and returns only the final state.
pub fn run_final(problem: &ProblemInstance, config: &OptimizerConfig) -> Result<RunSummary> {
    config.validate(problem)?;
    Ok(run_engine(problem, config, |_| {}))
}

/// Runs and streams each iterate `(t, x_t)` to `observe`.
pub fn run_observed<F>(problem: &ProblemInstance, config: &OptimizerConfig, mut observe: F) -> Result<RunSummary>
where
    F: FnMut(usize, &[f64]),
{
    config.validate(problem)?;
    Ok(run_engine(problem, config, |view| observe(view.t, view.x)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gd_on_quadratic_contracts() {
        let p = ProblemInstance::quadratic(1).unwrap();
        let tr = run(&p, &OptimizerConfig::gd(0.25, 4, vec![1.0])).unwrap();
        assert_eq!(tr.len(), 4);
        for t in 0..=4 {
            assert_eq!(tr.iterate(t)[0], 0.5f64.powi(t as i32));
        }
        assert_eq!(tr.last()[0], 0.0625);
        assert_eq!(tr.g_gap().unwrap()[4], 0.0625 * 0.0625);
    }

    #[test]
    fn perturbed_without_noise_is_gd() {
        let p = ProblemInstance::toy_sine(10.0, 1.0).unwrap();
        let gd = run(&p, &OptimizerConfig::gd(0.01, 50, vec![37.0])).unwrap();
        let cfg = OptimizerConfig::perturbed(0.01, 50, vec![37.0], SmoothingSpec::None, NoiseSpec::None, 3);
        let ps = run(&p, &cfg).unwrap();
        assert_eq!(gd.iterates, ps.iterates);
        let cfg = OptimizerConfig::perturbed(
            0.01,
            50,
            vec![37.0],
            SmoothingSpec::IsotropicGaussian { zeta: 0.0 },
            NoiseSpec::Gaussian { variance: 0.0 },
            3,
        );
        assert_eq!(gd.iterates, run(&p, &cfg).unwrap().iterates);
    }

    #[test]
    fn perturbed_without_smoothing_is_sgd() {
        let p = ProblemInstance::toy_sine(10.0, 1.0).unwrap();
        let noise = NoiseSpec::Gaussian { variance: 0.3 };
        let sgd = run(&p, &OptimizerConfig::sgd(0.001, 80, vec![5.0], noise, 9)).unwrap();
        let cfg = OptimizerConfig::perturbed(0.001, 80, vec![5.0], SmoothingSpec::None, noise, 9);
        let ps = run(&p, &cfg).unwrap();
        assert_eq!(sgd.iterates, ps.iterates);
    }

    #[test]
    fn shadow_sequence_reconstructs_iterates() {
        let p = ProblemInstance::toy_sine(10.0, 1.0).unwrap();
        let noise = NoiseSpec::Gaussian { variance: 2.0 };
        let gamma = 0.002;
        let tr = run(&p, &OptimizerConfig::sgd(gamma, 60, vec![12.0], noise, 4)).unwrap();
        for t in 0..60 {
            let y = tr.alternate(t + 1).unwrap()[0];
            let w = tr.noise(t).unwrap()[0];
            let x = tr.iterate(t + 1)[0];
            assert!((y + gamma * w - x).abs() <= 1e-13 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn divergence_is_flagged() {
        let p = ProblemInstance::quadratic(1).unwrap();
        let tr = run(&p, &OptimizerConfig::gd(1.5, 5000, vec![1.0])).unwrap();
        assert!(tr.diverged());
        assert!(tr.len() < 5000);
        assert!(tr.f_values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn config_validation() {
        let p = ProblemInstance::toy_sine(10.0, 1.0).unwrap();
        assert!(run(&p, &OptimizerConfig::gd(0.0, 5, vec![1.0])).is_err());
        assert!(run(&p, &OptimizerConfig::gd(0.1, 0, vec![1.0])).is_err());
        assert!(run(&p, &OptimizerConfig::gd(0.1, 5, vec![1.0, 2.0])).is_err());
        let mut c = OptimizerConfig::gd(0.1, 5, vec![1.0]);
        c.noise = NoiseSpec::Gaussian { variance: 1.0 };
        assert!(run(&p, &c).is_err());
        let c = OptimizerConfig::sgd(0.1, 5, vec![1.0], NoiseSpec::SingleIndex, 0);
        assert!(run(&p, &c).is_err());
    }

    #[test]
    fn gd_descends_on_quadratic() {
        let p = ProblemInstance::quadratic(3).unwrap();
        let tr = run(&p, &OptimizerConfig::gd(0.4, 30, vec![3.0, -1.0, 2.0])).unwrap();
        for t in 0..30 {
            assert!(tr.f_values()[t + 1] <= tr.f_values()[t]);
        }
    }

    #[test]
    fn replicas_use_disjoint_streams() {
        let p = ProblemInstance::toy_sine(10.0, 1.0).unwrap();
        let s = SmoothingSpec::IsotropicGaussian { zeta: 1.0 };
        let c = OptimizerConfig::perturbed(0.01, 10, vec![3.0], s, NoiseSpec::None, 1);
        let a = run(&p, &c).unwrap();
        let b = run(&p, &c.clone().with_replica(1)).unwrap();
        assert_ne!(a.last(), b.last());
        assert_eq!(a, run(&p, &c).unwrap());
    }
}
