//! Perturbation distributions `U(x)` and reference smoothed-gradient oracles.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::problems::{
    toy_smoothed_closed_form, valley_smoothed_gradient, Family, Part, ProblemInstance,
};
use crate::quadrature::GaussHermite;
use crate::rng::{Purpose, StreamKey};
use crate::stats::RunningStats;
use crate::vecops::{axpy, norm_sq, sub_into};

/// Distribution of the perturbation `u` subtracted from the query point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothingSpec {
    None,
    /// `u ~ N(0, (ζ²/d)·I)`, so `E‖u‖² = ζ²`.
    IsotropicGaussian { zeta: f64 },
    /// `u = γ(∇f_k(x) − ∇f_j(x))` with `k, j` independent and uniform.
    PairDifference { gamma: f64 },
    /// `u = γ(∇f_k(x) − ∇f(x))` with `k` uniform.
    FullBatchDifference { gamma: f64 },
}

impl SmoothingSpec {
    pub fn is_none(&self) -> bool {
        matches!(self, SmoothingSpec::None)
            || matches!(self, SmoothingSpec::IsotropicGaussian { zeta } if *zeta == 0.0)
    }

    pub fn validate(&self, problem: &ProblemInstance) -> Result<()> {
        match *self {
            SmoothingSpec::None => Ok(()),
            SmoothingSpec::IsotropicGaussian { zeta } => check_zeta(zeta),
            SmoothingSpec::PairDifference { gamma }
            | SmoothingSpec::FullBatchDifference { gamma } => {
                if !(gamma > 0.0 && gamma.is_finite()) {
                    return Err(LabError::invalid("gamma", "must be positive and finite"));
                }
                if problem.is_finite_sum() {
                    Ok(())
                } else {
                    Err(LabError::Unsupported {
                        operation: "gradient-difference smoothing",
                        what: problem.describe(),
                    })
                }
            }
        }
    }

    /// Writes one draw into `out`; `scratch` must have the problem dimension.
    pub(crate) fn sample_into<R: Rng + ?Sized>(
        &self,
        problem: &ProblemInstance,
        x: &[f64],
        rng: &mut R,
        out: &mut [f64],
        scratch: &mut [f64],
    ) {
        match *self {
            SmoothingSpec::None => out.fill(0.0),
            SmoothingSpec::IsotropicGaussian { zeta } => {
                if zeta == 0.0 {
                    out.fill(0.0);
                    return;
                }
                let sd = zeta / (out.len() as f64).sqrt();
                for o in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = sd * z;
                }
            }
            SmoothingSpec::PairDifference { gamma } => {
                let n = problem.n_components().expect("validated finite sum");
                let k = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                if k == j {
                    out.fill(0.0);
                    return;
                }
                problem.component_grad_into(k, x, out);
                problem.component_grad_into(j, x, scratch);
                for (o, s) in out.iter_mut().zip(scratch.iter()) {
                    *o = gamma * (*o - s);
                }
            }
            SmoothingSpec::FullBatchDifference { gamma } => {
                let n = problem.n_components().expect("validated finite sum");
                let k = rng.random_range(0..n);
                problem.component_grad_into(k, x, out);
                problem.grad_into(Part::F, x, scratch);
                for (o, s) in out.iter_mut().zip(scratch.iter()) {
                    *o = gamma * (*o - s);
                }
            }
        }
    }
}

/// One draw `u ~ U(x)`.
pub fn sample_perturbation<R: Rng + ?Sized>(
    spec: &SmoothingSpec,
    problem: &ProblemInstance,
    x: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    problem.check_point(x)?;
    spec.validate(problem)?;
    let d = problem.dimension();
    let mut out = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    spec.sample_into(problem, x, rng, &mut out, &mut scratch);
    Ok(out)
}

/// How to evaluate `E f(x − u)` for Gaussian `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceMethod {
    /// 64-node Gauss–Hermite rule; one-dimensional problems only.
    Quadrature,
    MonteCarlo { samples: usize, seed: u64 },
    /// Closed form when one exists, else quadrature in 1-D, else Monte Carlo
    /// with [`DEFAULT_MC_SAMPLES`] samples.
    Auto,
}

pub const QUADRATURE_ORDER: usize = 64;
pub const DEFAULT_MC_SAMPLES: usize = 1_000_000;

/// `∇f_U(x)` for `U = N(0, (ζ²/d)·I)`.
pub fn smoothed_grad_reference(
    problem: &ProblemInstance,
    zeta: f64,
    x: &[f64],
    method: ReferenceMethod,
) -> Result<Vec<f64>> {
    smoothed_grad_part(problem, Part::F, zeta, x, method)
}

/// Gradient of the smoothed `part` (`f`, `g` or `h`).
pub fn smoothed_grad_part(
    problem: &ProblemInstance,
    part: Part,
    zeta: f64,
    x: &[f64],
    method: ReferenceMethod,
) -> Result<Vec<f64>> {
    problem.check_point(x)?;
    check_zeta(zeta)?;
    if zeta == 0.0 {
        return problem.gradient(part, x);
    }
    let d = problem.dimension();
    match method {
        ReferenceMethod::Quadrature => {
            if d != 1 {
                return Err(quadrature_unsupported(d));
            }
            let rule = GaussHermite::new(QUADRATURE_ORDER);
            let mut buf = [0.0];
            let v = rule.expect_scaled(zeta, |u| {
                problem.grad_into(part, &[x[0] - u], &mut buf);
                buf[0]
            });
            Ok(vec![v])
        }
        ReferenceMethod::MonteCarlo { samples, seed } => {
            monte_carlo_grad(problem, part, zeta, x, samples, seed)
        }
        ReferenceMethod::Auto => {
            if let Some(g) = closed_form_grad(problem, part, zeta, x) {
                Ok(g)
            } else if d == 1 {
                smoothed_grad_part(problem, part, zeta, x, ReferenceMethod::Quadrature)
            } else {
                monte_carlo_grad(problem, part, zeta, x, DEFAULT_MC_SAMPLES, 0)
            }
        }
    }
}

/// Smoothed value `E part(x − u)`.
pub fn smoothed_value_reference(
    problem: &ProblemInstance,
    part: Part,
    zeta: f64,
    x: &[f64],
    method: ReferenceMethod,
) -> Result<f64> {
    problem.check_point(x)?;
    check_zeta(zeta)?;
    if zeta == 0.0 {
        return problem.value(part, x);
    }
    let d = problem.dimension();
    let value = |p: &ProblemInstance, pt: &[f64], out: &mut [f64]| {
        out[0] = p.value_unchecked(part, pt);
    };
    match method {
        ReferenceMethod::Quadrature | ReferenceMethod::Auto if d == 1 => {
            let rule = GaussHermite::new(QUADRATURE_ORDER);
            Ok(rule.expect_scaled(zeta, |u| problem.value_unchecked(part, &[x[0] - u])))
        }
        ReferenceMethod::Quadrature => Err(quadrature_unsupported(d)),
        ReferenceMethod::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(LabError::invalid("samples", "must be at least 1"));
            }
            Ok(mc_mean(problem, zeta, x, samples, seed, 1, value)[0])
        }
        ReferenceMethod::Auto => Ok(mc_mean(problem, zeta, x, DEFAULT_MC_SAMPLES, 0, 1, value)[0]),
    }
}

fn quadrature_unsupported(d: usize) -> LabError {
    LabError::Unsupported {
        operation: "Gauss-Hermite quadrature",
        what: format!("dimension {d}"),
    }
}

fn check_zeta(zeta: f64) -> Result<()> {
    if zeta >= 0.0 && zeta.is_finite() {
        Ok(())
    } else {
        Err(LabError::invalid("zeta", "must be finite and non-negative"))
    }
}

/// Exact smoothed gradients for the analytic families.
pub(crate) fn closed_form_grad(
    problem: &ProblemInstance,
    part: Part,
    zeta: f64,
    x: &[f64],
) -> Option<Vec<f64>> {
    let d = problem.dimension();
    let s = zeta / (d as f64).sqrt();
    let grad_g = || {
        let mut out = vec![0.0; d];
        problem.grad_into(Part::G, x, &mut out);
        out
    };
    match *problem.family() {
        Family::ToySine { a, b } => {
            let t = toy_smoothed_closed_form(a, b, zeta, x[0]).ok()?;
            Some(vec![match part {
                Part::F => t.grad_f_u,
                Part::G => t.grad_g_u,
                Part::H => t.grad_h_u,
            }])
        }
        Family::Valley { alpha, lambda } => {
            let f = valley_smoothed_gradient(alpha, lambda, s, x);
            Some(match part {
                Part::F => f,
                Part::G => grad_g(),
                Part::H => {
                    let mut h = f;
                    for (hi, xi) in h.iter_mut().zip(x) {
                        *hi -= xi;
                    }
                    h
                }
            })
        }
        Family::Quadratic { sine } => {
            let damp = (-0.5 * s * s).exp();
            let h: Vec<f64> = x.iter().map(|v| sine * damp * v.cos()).collect();
            Some(match part {
                Part::G => grad_g(),
                Part::H => h,
                Part::F => {
                    let mut g = grad_g();
                    axpy(1.0, &h, &mut g);
                    g
                }
            })
        }
        Family::FiniteSum(_) => None,
    }
}

const MC_CHUNK: usize = 4096;

/// Mean of `eval(x − u)` over `samples` Gaussian draws. Chunks run in
/// parallel and are reduced in index order.
fn mc_mean<F>(
    problem: &ProblemInstance,
    zeta: f64,
    x: &[f64],
    samples: usize,
    seed: u64,
    width: usize,
    eval: F,
) -> Vec<f64>
where
    F: Fn(&ProblemInstance, &[f64], &mut [f64]) + Sync,
{
    let d = x.len();
    let sd = zeta / (d as f64).sqrt();
    let chunks = samples.div_ceil(MC_CHUNK);
    let sums: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = StreamKey::new(seed, c as u64, 0, Purpose::Estimation).rng();
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut pt = vec![0.0; d];
            let mut val = vec![0.0; width];
            let mut acc = vec![0.0; width];
            for _ in 0..count {
                for (p, xi) in pt.iter_mut().zip(x) {
                    let z: f64 = rng.sample(StandardNormal);
                    *p = xi - sd * z;
                }
                eval(problem, &pt, &mut val);
                axpy(1.0, &val, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; width];
    for s in &sums {
        axpy(1.0, s, &mut total);
    }
    for t in &mut total {
        *t /= samples as f64;
    }
    total
}

fn monte_carlo_grad(
    problem: &ProblemInstance,
    part: Part,
    zeta: f64,
    x: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(LabError::invalid("samples", "must be at least 1"));
    }
    Ok(mc_mean(problem, zeta, x, samples, seed, x.len(), |p, pt, out| {
        p.grad_into(part, pt, out)
    }))
}

/// Outcome of [`perturbation_variance_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub empirical_eu2: f64,
    pub std_err: f64,
    /// `ζ²` for Gaussian smoothing, `2γ²·E‖w‖²` for pair differences,
    /// `γ²·E‖w‖²` for full-batch differences, `0` for no smoothing.
    pub bound_rhs: f64,
    /// `E‖u‖² / (2γ²·E‖w‖²)` for pair differences.
    pub pair_vs_sgd_ratio: Option<f64>,
}

/// Monte Carlo estimate of `E‖u‖²` next to its theoretical value. The
/// single-index noise `w = ∇f − ∇f_i` is sampled from an independent stream.
pub fn perturbation_variance_check(
    spec: &SmoothingSpec,
    problem: &ProblemInstance,
    x: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<VarianceCheck> {
    problem.check_point(x)?;
    spec.validate(problem)?;
    if n_draws < 1000 {
        return Err(LabError::invalid("n_draws", "must be at least 1000"));
    }
    let d = problem.dimension();
    let mut u = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let mut rng = StreamKey::new(seed, 0, 0, Purpose::Smoothing).rng();
    let mut eu2 = RunningStats::new();
    for _ in 0..n_draws {
        spec.sample_into(problem, x, &mut rng, &mut u, &mut scratch);
        eu2.push(norm_sq(&u));
    }
    let sgd_term = |gamma: f64| -> f64 {
        let n = problem.n_components().expect("validated finite sum");
        let mut full = vec![0.0; d];
        problem.grad_into(Part::F, x, &mut full);
        let mut rng = StreamKey::new(seed, 0, 0, Purpose::Noise).rng();
        let mut gi = vec![0.0; d];
        let mut w = vec![0.0; d];
        let mut s = RunningStats::new();
        for _ in 0..n_draws {
            let i = rng.random_range(0..n);
            problem.component_grad_into(i, x, &mut gi);
            sub_into(&full, &gi, &mut w);
            s.push(norm_sq(&w));
        }
        gamma * gamma * s.mean()
    };
    let (bound_rhs, ratio) = match *spec {
        SmoothingSpec::None => (0.0, None),
        SmoothingSpec::IsotropicGaussian { zeta } => (zeta * zeta, None),
        SmoothingSpec::PairDifference { gamma } => {
            let rhs = 2.0 * sgd_term(gamma);
            (rhs, Some(eu2.mean() / rhs))
        }
        SmoothingSpec::FullBatchDifference { gamma } => (sgd_term(gamma), None),
    };
    Ok(VarianceCheck {
        empirical_eu2: eu2.mean(),
        std_err: eu2.std_err(),
        bound_rhs,
        pair_vs_sgd_ratio: ratio,
    })
}

/// Exact `E‖u‖²` by enumerating every index outcome (finite sums only).
pub fn exact_perturbation_second_moment(
    spec: &SmoothingSpec,
    problem: &ProblemInstance,
    x: &[f64],
) -> Result<f64> {
    problem.check_point(x)?;
    spec.validate(problem)?;
    let n = finite_sum_size(problem)?;
    match *spec {
        SmoothingSpec::PairDifference { gamma } => {
            let grads = component_grads(problem, x, n);
            let mut diff = vec![0.0; x.len()];
            let mut total = 0.0;
            for gk in &grads {
                for gj in &grads {
                    sub_into(gk, gj, &mut diff);
                    total += norm_sq(&diff);
                }
            }
            Ok(gamma * gamma * total / (n * n) as f64)
        }
        SmoothingSpec::FullBatchDifference { gamma } => {
            Ok(gamma * gamma * exact_sgd_noise_second_moment(problem, x)?)
        }
        _ => Err(LabError::Unsupported {
            operation: "exhaustive enumeration",
            what: "smoothing without index sampling".into(),
        }),
    }
}

/// Exact `E‖∇f(x) − ∇f_i(x)‖²` over uniform `i`.
pub fn exact_sgd_noise_second_moment(problem: &ProblemInstance, x: &[f64]) -> Result<f64> {
    problem.check_point(x)?;
    let n = finite_sum_size(problem)?;
    let grads = component_grads(problem, x, n);
    let mut full = vec![0.0; x.len()];
    problem.grad_into(Part::F, x, &mut full);
    let mut diff = vec![0.0; x.len()];
    let mut total = 0.0;
    for g in &grads {
        sub_into(&full, g, &mut diff);
        total += norm_sq(&diff);
    }
    Ok(total / n as f64)
}

fn finite_sum_size(problem: &ProblemInstance) -> Result<usize> {
    problem.n_components().ok_or_else(|| LabError::Unsupported {
        operation: "exhaustive enumeration",
        what: problem.describe(),
    })
}

fn component_grads(problem: &ProblemInstance, x: &[f64], n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut g = vec![0.0; x.len()];
            problem.component_grad_into(i, x, &mut g);
            g
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Dataset;

    fn logistic(n: usize, d: usize) -> ProblemInstance {
        ProblemInstance::finite_sum(Dataset::synthetic(n, d, 5).unwrap()).unwrap()
    }

    #[test]
    fn none_is_zero() {
        let p = ProblemInstance::toy_sine(10.0, 1.0).unwrap();
        let mut rng = StreamKey::new(0, 0, 0, Purpose::Smoothing).rng();
        for _ in 0..10 {
            let u = sample_perturbation(&SmoothingSpec::None, &p, &[3.0], &mut rng).unwrap();
            assert_eq!(u, vec![0.0]);
        }
        let c = perturbation_variance_check(&SmoothingSpec::None, &p, &[1.0], 1000, 0).unwrap();
        assert_eq!(c.empirical_eu2, 0.0);
    }

    #[test]
    fn pair_difference_single_term_is_zero() {
        let ds = Dataset::new(1, 2, vec![0.5, 0.1], vec![1]).unwrap();
        let p = ProblemInstance::finite_sum(ds).unwrap();
        let mut rng = StreamKey::new(0, 0, 0, Purpose::Smoothing).rng();
        let spec = SmoothingSpec::PairDifference { gamma: 0.3 };
        for _ in 0..5 {
            let u = sample_perturbation(&spec, &p, &[0.2, 0.2, 0.2], &mut rng).unwrap();
            assert_eq!(u, vec![0.0; 3]);
        }
    }

    #[test]
    fn pair_difference_needs_finite_sum() {
        let p = ProblemInstance::toy_sine(10.0, 1.0).unwrap();
        let mut rng = StreamKey::new(0, 0, 0, Purpose::Smoothing).rng();
        let spec = SmoothingSpec::PairDifference { gamma: 0.1 };
        let err = sample_perturbation(&spec, &p, &[0.0], &mut rng);
        assert!(matches!(err, Err(LabError::Unsupported { .. })));
    }

    #[test]
    fn gaussian_second_moment() {
        let p = ProblemInstance::quadratic(4).unwrap();
        let spec = SmoothingSpec::IsotropicGaussian { zeta: 2.0 };
        let c = perturbation_variance_check(&spec, &p, &[0.0; 4], 100_000, 9).unwrap();
        assert!((c.empirical_eu2 - 4.0).abs() < 0.08, "{}", c.empirical_eu2);
        assert!(c.empirical_eu2 <= c.bound_rhs + 3.0 * c.std_err);
    }

    #[test]
    fn exhaustive_pair_identity() {
        let p = logistic(20, 3);
        let x = [0.3, -0.2, 0.5, 0.1];
        let gamma = 0.1;
        let pair =
            exact_perturbation_second_moment(&SmoothingSpec::PairDifference { gamma }, &p, &x)
                .unwrap();
        let full =
            exact_perturbation_second_moment(&SmoothingSpec::FullBatchDifference { gamma }, &p, &x)
                .unwrap();
        let w2 = exact_sgd_noise_second_moment(&p, &x).unwrap();
        let ratio = pair / (2.0 * gamma * gamma * w2);
        assert!((ratio - 1.0).abs() < 1e-12, "{ratio}");
        assert!((full - 0.5 * pair).abs() < 1e-12 * pair);
    }

    #[test]
    fn pair_ratio_monte_carlo() {
        let p = logistic(360, 8);
        let x = vec![0.05; 9];
        let spec = SmoothingSpec::PairDifference { gamma: 0.1 };
        let c = perturbation_variance_check(&spec, &p, &x, 100_000, 4).unwrap();
        let r = c.pair_vs_sgd_ratio.unwrap();
        assert!((0.95..=1.05).contains(&r), "{r}");
    }

    #[test]
    fn quadrature_needs_one_dimension() {
        let p = ProblemInstance::quadratic(2).unwrap();
        let err = smoothed_grad_reference(&p, 1.0, &[0.0, 0.0], ReferenceMethod::Quadrature);
        assert!(matches!(err, Err(LabError::Unsupported { .. })));
    }

    #[test]
    fn quadratic_gradient_unchanged_by_smoothing() {
        let p = ProblemInstance::quadratic(1).unwrap();
        for &x in &[-3.0, 0.0, 1.7] {
            let g = smoothed_grad_reference(&p, 1.5, &[x], ReferenceMethod::Quadrature).unwrap();
            assert!((g[0] - 2.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_width_returns_exact_gradient() {
        let p = ProblemInstance::toy_sine(10.0, 1.0).unwrap();
        let g = smoothed_grad_reference(&p, 0.0, &[2.2], ReferenceMethod::Quadrature).unwrap();
        assert_eq!(g, p.gradient(Part::F, &[2.2]).unwrap());
    }

    #[test]
    fn closed_forms_match_monte_carlo() {
        let mc = ReferenceMethod::MonteCarlo {
            samples: 400_000,
            seed: 1,
        };
        let p = ProblemInstance::quadratic_with_sine(3, 1.0).unwrap();
        let x = [0.4, -1.1, 2.0];
        let exact = smoothed_grad_reference(&p, 1.2, &x, ReferenceMethod::Auto).unwrap();
        let est = smoothed_grad_reference(&p, 1.2, &x, mc).unwrap();
        for (a, b) in exact.iter().zip(&est) {
            assert!((a - b).abs() < 5e-3, "{a} vs {b}");
        }
        let p = ProblemInstance::valley(0.5, 0.3, 2).unwrap();
        let x = [1.1, 0.4];
        let exact = smoothed_grad_reference(&p, 0.3, &x, ReferenceMethod::Auto).unwrap();
        let est = smoothed_grad_reference(&p, 0.3, &x, mc).unwrap();
        for (a, b) in exact.iter().zip(&est) {
            assert!((a - b).abs() < 5e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn toy_value_quadrature_matches_closed_form() {
        let p = ProblemInstance::toy_sine(10.0, 1.0).unwrap();
        let v = smoothed_value_reference(&p, Part::F, 2.0, &[0.0], ReferenceMethod::Quadrature)
            .unwrap();
        let c = toy_smoothed_closed_form(10.0, 1.0, 2.0, 0.0).unwrap();
        assert!((v - c.f_u).abs() < 1e-10);
    }
}
