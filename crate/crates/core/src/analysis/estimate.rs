//! Fitting the noise constants `(σ′², M′)` and the structure constants
//! `(Δ, m)` / `(Δ⊥, m∥)` from oracle access.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::problems::{stochastic_grad_into, NoiseSpec, Part, ProblemInstance};
use crate::rng::{Purpose, StreamKey};
use crate::smoothing::{smoothed_grad_reference, ReferenceMethod, SmoothingSpec};
use crate::stats::{median, RunningStats};
use crate::vecops::{dot, norm_sq};

/// `v ≤ intercept + slope·b` over a point cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub intercept: f64,
    pub slope: f64,
    /// All `b` equal: the slope is not identifiable and is set to zero.
    pub degenerate: bool,
    /// Mean slack `intercept + slope·b − v` over the cloud.
    pub residual: f64,
}

/// Candidate slopes: `0` and 61 log-spaced values in `[10⁻³, 10³]`.
pub fn slope_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    grid.extend((0..=60).map(|i| 10f64.powf(-3.0 + 6.0 * f64::from(i) / 60.0)));
    grid
}

/// Smallest intercept making the line with the given slope dominate every
/// point.
pub fn required_intercept(b: &[f64], v: &[f64], slope: f64) -> f64 {
    b.iter()
        .zip(v)
        .map(|(bi, vi)| vi - slope * bi)
        .fold(0.0, f64::max)
}

/// Sweeps [`slope_grid`] and keeps the line minimizing
/// `intercept + slope·median(b)`; ties go to the smaller slope. Every point
/// lies on or below the returned line.
pub fn fit_linear_envelope(b: &[f64], v: &[f64]) -> Result<EnvelopeFit> {
    if b.is_empty() || b.len() != v.len() {
        return Err(LabError::invalid("cloud", "need equally many b and v values, at least one"));
    }
    if b.iter().chain(v).any(|x| !x.is_finite()) {
        return Err(LabError::invalid("cloud", "values must be finite"));
    }
    let residual = |c0: f64, c1: f64| {
        b.iter().zip(v).map(|(bi, vi)| c0 + c1 * bi - vi).sum::<f64>() / b.len() as f64
    };
    if b.iter().all(|&x| x == b[0]) {
        let c0 = required_intercept(b, v, 0.0);
        return Ok(EnvelopeFit {
            intercept: c0,
            slope: 0.0,
            degenerate: true,
            residual: residual(c0, 0.0),
        });
    }
    let med = median(b);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for slope in slope_grid() {
        let c0 = required_intercept(b, v, slope);
        let score = c0 + slope * med;
        if score < best.0 {
            best = (score, c0, slope);
        }
    }
    Ok(EnvelopeFit {
        intercept: best.1,
        slope: best.2,
        degenerate: false,
        residual: residual(best.1, best.2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    /// `‖∇f_U(x)‖²`
    pub b: f64,
    /// `E‖∇f(x − u, ξ) − ∇f_U(x)‖²`
    pub v: f64,
    pub v_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseFit {
    pub sigma2: f64,
    pub m_prime: f64,
    pub degenerate: bool,
    pub residual: f64,
    pub draws: usize,
    pub points: Vec<NoisePoint>,
}

pub const MIN_FIT_POINTS: usize = 20;
pub const MIN_FIT_DRAWS: usize = 1000;

/// Estimates `(σ′², M′)` with `E‖∇f(x − u, ξ) − ∇f_U(x)‖² ≤ σ′² + M′‖∇f_U(x)‖²`.
///
/// `∇f_U` comes from the reference oracle for Gaussian smoothing; for
/// gradient-difference smoothing the sample mean is used together with the
/// unbiased spread around it.
pub fn fit_noise_constants(
    problem: &ProblemInstance,
    smoothing: &SmoothingSpec,
    noise: NoiseSpec,
    points: &[Vec<f64>],
    draws: usize,
    seed: u64,
) -> Result<NoiseFit> {
    if points.len() < MIN_FIT_POINTS {
        return Err(LabError::invalid("points", format!("need at least {MIN_FIT_POINTS}")));
    }
    if draws < MIN_FIT_DRAWS {
        return Err(LabError::invalid("draws", format!("need at least {MIN_FIT_DRAWS}")));
    }
    smoothing.validate(problem)?;
    noise.validate(problem)?;
    for x in points {
        problem.check_point(x)?;
    }
    let d = problem.dimension();
    let mut results: Vec<Result<NoisePoint>> = Vec::with_capacity(points.len());
    super::map_ordered(
        points.len(),
        |i| noise_point(problem, smoothing, noise, &points[i], draws, seed, i as u64, d),
        |_, r| results.push(r),
    );
    let cloud: Vec<NoisePoint> = results.into_iter().collect::<Result<_>>()?;
    let b: Vec<f64> = cloud.iter().map(|p| p.b).collect();
    let v: Vec<f64> = cloud.iter().map(|p| p.v).collect();
    let fit = fit_linear_envelope(&b, &v)?;
    Ok(NoiseFit {
        sigma2: fit.intercept,
        m_prime: fit.slope,
        degenerate: fit.degenerate,
        residual: fit.residual,
        draws,
        points: cloud,
    })
}

#[allow(clippy::too_many_arguments)]
fn noise_point(
    problem: &ProblemInstance,
    smoothing: &SmoothingSpec,
    noise: NoiseSpec,
    x: &[f64],
    draws: usize,
    seed: u64,
    index: u64,
    d: usize,
) -> Result<NoisePoint> {
    let reference = match *smoothing {
        SmoothingSpec::None => Some(problem.gradient(Part::F, x)?),
        SmoothingSpec::IsotropicGaussian { zeta } => {
            Some(smoothed_grad_reference(problem, zeta, x, ReferenceMethod::Auto)?)
        }
        _ => None,
    };
    let key = StreamKey::new(seed, index, 0, Purpose::Estimation);
    let mut rng_u = key.with_purpose(Purpose::Smoothing).rng();
    let mut rng_w = key.with_purpose(Purpose::Noise).rng();
    let mut u = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let mut query = vec![0.0; d];
    let mut grad = vec![0.0; d];
    match reference {
        Some(r) => {
            let mut sq = RunningStats::new();
            for _ in 0..draws {
                smoothing.sample_into(problem, x, &mut rng_u, &mut u, &mut scratch);
                for j in 0..d {
                    query[j] = x[j] - u[j];
                }
                stochastic_grad_into(problem, &query, &mut rng_w, noise, &mut grad);
                let e: f64 = grad.iter().zip(&r).map(|(g, m)| (g - m) * (g - m)).sum();
                sq.push(e);
            }
            Ok(NoisePoint {
                b: norm_sq(&r),
                v: sq.mean(),
                v_se: sq.std_err(),
            })
        }
        None => {
            let mut coords = vec![RunningStats::new(); d];
            for _ in 0..draws {
                smoothing.sample_into(problem, x, &mut rng_u, &mut u, &mut scratch);
                for j in 0..d {
                    query[j] = x[j] - u[j];
                }
                stochastic_grad_into(problem, &query, &mut rng_w, noise, &mut grad);
                for (c, g) in coords.iter_mut().zip(&grad) {
                    c.push(*g);
                }
            }
            let v: f64 = coords.iter().map(|c| c.variance()).sum();
            let mean_sq: f64 = coords.iter().map(|c| c.mean() * c.mean()).sum();
            let n = draws as f64;
            Ok(NoisePoint {
                b: (mean_sq - v / n).max(0.0),
                v,
                v_se: v * (2.0 / (n - 1.0)).sqrt(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureMode {
    /// `‖r‖² ≤ Δ + m‖∇g‖²`
    Norm,
    /// `|r_g|² ≤ m∥‖∇g‖²` and `‖r_⊥‖² ≤ Δ⊥`
    Directional,
}

/// Residual `r(x) = ∇f_U(x) − ∇g(x)` split along and across `∇g(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructurePoint {
    pub grad_g_sq: f64,
    pub r_sq: f64,
    pub r_par_sq: f64,
    pub r_perp_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionalFit {
    pub m_par: f64,
    pub delta_perp: f64,
    /// Points with `∇g(x) = 0`, whose residual was charged entirely to `Δ⊥`.
    pub zero_gradient_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureFit {
    pub mode: StructureMode,
    pub norm: Option<EnvelopeFit>,
    pub directional: Option<DirectionalFit>,
    /// `false` when the fitted `m` (or `m∥`) is at least 1.
    pub feasible: bool,
    pub points: Vec<StructurePoint>,
}

impl StructureFit {
    /// `(m, Δ)` in the requested mode.
    pub fn constants(&self) -> (f64, f64) {
        match (self.norm, self.directional) {
            (Some(n), _) => (n.slope, n.intercept),
            (None, Some(dfit)) => (dfit.m_par, dfit.delta_perp),
            (None, None) => unreachable!("a fit always has one mode"),
        }
    }

    /// Number of points that violate `‖r‖² ≤ Δ + m‖∇g‖²` for the given pair.
    pub fn violations_of(&self, m: f64, delta: f64) -> usize {
        self.points
            .iter()
            .filter(|p| p.r_sq > delta + m * p.grad_g_sq)
            .count()
    }
}

/// Fits the structure constants of `f_U` for Gaussian smoothing of width
/// `zeta`, using the exact smoothed gradient where one is available.
pub fn fit_structure_constants(
    problem: &ProblemInstance,
    zeta: f64,
    points: &[Vec<f64>],
    mode: StructureMode,
) -> Result<StructureFit> {
    if points.is_empty() {
        return Err(LabError::invalid("points", "need at least one point"));
    }
    let d = problem.dimension();
    let mut cloud = Vec::with_capacity(points.len());
    let mut zero_grad = 0;
    for x in points {
        let fu = smoothed_grad_reference(problem, zeta, x, ReferenceMethod::Auto)?;
        let gg = problem.gradient(Part::G, x)?;
        let r: Vec<f64> = fu.iter().zip(&gg).map(|(a, b)| a - b).collect();
        let gsq = norm_sq(&gg);
        let r_sq = norm_sq(&r);
        let (r_par_sq, r_perp_sq) = if gsq == 0.0 {
            zero_grad += 1;
            (0.0, r_sq)
        } else if d == 1 {
            (r_sq, 0.0)
        } else {
            let proj = dot(&r, &gg);
            let par = proj * proj / gsq;
            (par, (r_sq - par).max(0.0))
        };
        cloud.push(StructurePoint {
            grad_g_sq: gsq,
            r_sq,
            r_par_sq,
            r_perp_sq,
        });
    }
    match mode {
        StructureMode::Norm => {
            let b: Vec<f64> = cloud.iter().map(|p| p.grad_g_sq).collect();
            let v: Vec<f64> = cloud.iter().map(|p| p.r_sq).collect();
            let fit = fit_linear_envelope(&b, &v)?;
            Ok(StructureFit {
                mode,
                norm: Some(fit),
                directional: None,
                feasible: fit.slope < 1.0,
                points: cloud,
            })
        }
        StructureMode::Directional => {
            let m_par = cloud
                .iter()
                .filter(|p| p.grad_g_sq > 0.0)
                .map(|p| p.r_par_sq / p.grad_g_sq)
                .fold(0.0, f64::max);
            let delta_perp = cloud.iter().map(|p| p.r_perp_sq).fold(0.0, f64::max);
            Ok(StructureFit {
                mode,
                norm: None,
                directional: Some(DirectionalFit {
                    m_par,
                    delta_perp,
                    zero_gradient_points: zero_grad,
                }),
                feasible: m_par < 1.0,
                points: cloud,
            })
        }
    }
}

/// All fitted constants for perturbed SGD with Gaussian smoothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionEstimate {
    pub sigma2: f64,
    pub m_prime: f64,
    pub delta: f64,
    pub m: f64,
    pub delta_perp: f64,
    pub m_par: f64,
    pub sample_points: usize,
    pub draws_per_point: usize,
    /// Mean slack of the noise envelope.
    pub residual: f64,
    pub feasible: bool,
    pub flags: Vec<String>,
}

pub fn estimate_assumptions(
    problem: &ProblemInstance,
    zeta: f64,
    noise: NoiseSpec,
    points: &[Vec<f64>],
    draws: usize,
    seed: u64,
) -> Result<AssumptionEstimate> {
    let smoothing = SmoothingSpec::IsotropicGaussian { zeta };
    let nf = fit_noise_constants(problem, &smoothing, noise, points, draws, seed)?;
    let norm = fit_structure_constants(problem, zeta, points, StructureMode::Norm)?;
    let dir = fit_structure_constants(problem, zeta, points, StructureMode::Directional)?;
    let (m, delta) = norm.constants();
    let dfit = dir.directional.expect("directional mode");
    let mut flags = Vec::new();
    if nf.degenerate {
        flags.push("noise cloud degenerate: slope fixed at 0".to_string());
    }
    if !norm.feasible {
        flags.push(format!("norm-mode m = {m} >= 1"));
    }
    if !dir.feasible {
        flags.push(format!("directional m = {} >= 1", dfit.m_par));
    }
    if dfit.zero_gradient_points > 0 {
        flags.push(format!(
            "{} point(s) with zero gradient of g charged to delta_perp",
            dfit.zero_gradient_points
        ));
    }
    Ok(AssumptionEstimate {
        sigma2: nf.sigma2,
        m_prime: nf.m_prime,
        delta,
        m,
        delta_perp: dfit.delta_perp,
        m_par: dfit.m_par,
        sample_points: points.len(),
        draws_per_point: draws,
        residual: nf.residual,
        feasible: norm.feasible && dir.feasible,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| vec![lo + (hi - lo) * i as f64 / (n - 1) as f64])
            .collect()
    }

    #[test]
    fn slope_grid_shape() {
        let g = slope_grid();
        assert_eq!(g.len(), 62);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 1e-3).abs() < 1e-18);
        assert!((g[61] - 1e3).abs() < 1e-9);
    }

    #[test]
    fn envelope_on_a_line() {
        let b = [0.0, 1.0, 2.0, 3.0];
        let v = [1.0, 2.0, 3.0, 4.0];
        let f = fit_linear_envelope(&b, &v).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cloud() {
        let f = fit_linear_envelope(&[2.0, 2.0], &[1.0, 3.0]).unwrap();
        assert!(f.degenerate);
        assert_eq!((f.intercept, f.slope), (3.0, 0.0));
    }

    #[test]
    fn noiseless_fit_is_zero() {
        let p = ProblemInstance::toy_sine(10.0, 1.0).unwrap();
        let pts = grid(-10.0, 10.0, 21);
        let f = fit_noise_constants(&p, &SmoothingSpec::None, NoiseSpec::None, &pts, 1000, 0).unwrap();
        assert_eq!((f.sigma2, f.m_prime), (0.0, 0.0));
    }

    #[test]
    fn additive_noise_fit() {
        let p = ProblemInstance::toy_sine(10.0, 1.0).unwrap();
        let pts = grid(-10.0, 10.0, 21);
        let noise = NoiseSpec::Gaussian { variance: 2.0 };
        let f = fit_noise_constants(&p, &SmoothingSpec::None, noise, &pts, 20_000, 1).unwrap();
        // The envelope is the max over 21 sample means, each with relative
        // standard error sqrt(2/20000).
        assert!((f.sigma2 - 2.0).abs() < 0.1, "{}", f.sigma2);
        assert!(f.m_prime < 1e-2, "{}", f.m_prime);
    }

    #[test]
    fn quadratic_has_no_structure_error() {
        let p = ProblemInstance::quadratic(2).unwrap();
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 - 4.5, 0.3 * i as f64]).collect();
        for mode in [StructureMode::Norm, StructureMode::Directional] {
            let f = fit_structure_constants(&p, 1.5, &pts, mode).unwrap();
            assert_eq!(f.constants(), (0.0, 0.0));
        }
    }

    #[test]
    fn one_dimensional_has_no_orthogonal_part() {
        let p = ProblemInstance::toy_sine(10.0, 1.0).unwrap();
        let f = fit_structure_constants(&p, 3.0, &grid(-20.0, 20.0, 101), StructureMode::Directional).unwrap();
        assert_eq!(f.directional.unwrap().delta_perp, 0.0);
        assert!(f.feasible);
    }
}
