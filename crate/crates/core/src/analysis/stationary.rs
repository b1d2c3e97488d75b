//! Stationary points of `f` and the bounds relating them to the minimizer
//! of `g`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::problems::{Family, Part, ProblemInstance};
use crate::rng::{Purpose, StreamKey};
use crate::vecops::{dist_sq, norm_sq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPoint {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    /// `‖∇f(x)‖` reached the requested tolerance.
    pub certified: bool,
}

fn point(problem: &ProblemInstance, x: Vec<f64>, tol: f64) -> StationaryPoint {
    let mut grad = vec![0.0; x.len()];
    problem.grad_into(Part::F, &x, &mut grad);
    let grad_norm = norm_sq(&grad).sqrt();
    StationaryPoint {
        f: problem.value_unchecked(Part::F, &x),
        grad_norm,
        certified: grad_norm <= tol,
        x,
    }
}

/// Every zero of `f′` on `[lo, hi]` bracketed by a sign change on a uniform
/// grid of `grid` points, refined by bisection.
pub fn stationary_points_1d(
    problem: &ProblemInstance,
    lo: f64,
    hi: f64,
    grid: usize,
    tol: f64,
) -> Result<Vec<StationaryPoint>> {
    if problem.dimension() != 1 {
        return Err(LabError::Unsupported {
            operation: "grid bracketing",
            what: format!("dimension {}", problem.dimension()),
        });
    }
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(LabError::invalid("box", "need finite lo < hi"));
    }
    if grid < 2 {
        return Err(LabError::invalid("grid", "need at least two points"));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(LabError::invalid("tol", "must be positive"));
    }
    let df = |x: f64| {
        let mut g = [0.0];
        problem.grad_into(Part::F, &[x], &mut g);
        g[0]
    };
    let xs: Vec<f64> = (0..grid)
        .map(|i| lo + (hi - lo) * i as f64 / (grid - 1) as f64)
        .collect();
    let ds: Vec<f64> = xs.iter().map(|&x| df(x)).collect();
    let mut out = Vec::new();
    for i in 0..grid {
        if ds[i] == 0.0 {
            out.push(point(problem, vec![xs[i]], tol));
        }
        if i + 1 < grid && ds[i] * ds[i + 1] < 0.0 {
            let (mut a, mut b, mut da) = (xs[i], xs[i + 1], ds[i]);
            let mut best = if ds[i].abs() < ds[i + 1].abs() { xs[i] } else { xs[i + 1] };
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                let dm = df(m);
                if dm.abs() < df(best).abs() {
                    best = m;
                }
                if dm == 0.0 || dm.abs() <= tol * 1e-3 {
                    best = m;
                    break;
                }
                if dm * da < 0.0 {
                    b = m;
                } else {
                    a = m;
                    da = dm;
                }
            }
            out.push(point(problem, vec![best], tol));
        }
    }
    Ok(out)
}

/// Gradient descent on `f` from `starts` uniform points in the box
/// `[lo, hi]^d`, keeping distinct limits. Finds local minima only.
#[allow(clippy::too_many_arguments)]
pub fn stationary_points_multistart(
    problem: &ProblemInstance,
    lo: f64,
    hi: f64,
    starts: usize,
    gamma: f64,
    tol: f64,
    max_iters: usize,
    seed: u64,
) -> Result<Vec<StationaryPoint>> {
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(LabError::invalid("box", "need finite lo < hi"));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(LabError::invalid("gamma", "must be positive and finite"));
    }
    let d = problem.dimension();
    let mut found: Vec<StationaryPoint> = Vec::new();
    let mut grad = vec![0.0; d];
    for s in 0..starts {
        let mut rng = StreamKey::new(seed, s as u64, 0, Purpose::Init).rng();
        let mut x: Vec<f64> = (0..d).map(|_| rng.random_range(lo..hi)).collect();
        for _ in 0..max_iters {
            problem.grad_into(Part::F, &x, &mut grad);
            if norm_sq(&grad).sqrt() <= tol {
                break;
            }
            for (xi, gi) in x.iter_mut().zip(&grad) {
                *xi -= gamma * gi;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            continue;
        }
        if found.iter().all(|p| dist_sq(&p.x, &x) > 1e-12) {
            found.push(point(problem, x, tol));
        }
    }
    Ok(found)
}

/// `|h| ≤ B₁` and `‖∇h‖² ≤ B₂` everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HBounds {
    pub b1: f64,
    pub b2: f64,
}

impl HBounds {
    /// Bounds known in closed form, for families with bounded `h`.
    pub fn known(problem: &ProblemInstance) -> Option<Self> {
        match *problem.family() {
            Family::Quadratic { sine } => {
                let d = problem.dimension() as f64;
                Some(Self {
                    b1: sine.abs() * d,
                    b2: sine * sine * d,
                })
            }
            Family::FiniteSum(_) => Some(Self { b1: 0.0, b2: 0.0 }),
            _ => None,
        }
    }
}

/// `‖x* − x_g*‖² ≤ (2/μ)·(·)` in its printed and corrected orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub x_star: Vec<f64>,
    pub lhs: f64,
    /// `(2/μ)(h(x*) − h(x_g*))`
    pub rhs_printed: f64,
    /// `(2/μ)(h(x_g*) − h(x*))`
    pub rhs_corrected: f64,
    pub holds_printed: bool,
    pub holds_corrected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaB5Point {
    pub x: Vec<f64>,
    pub g_gap: f64,
    pub dist_sq: f64,
    pub f: f64,
    /// `0 ≤ g(x) − g* ≤ B₂/(2μ)`
    pub value_ok: bool,
    /// `‖x − x_g*‖² ≤ B₂/μ²`
    pub distance_ok: bool,
    /// `g* − B₁ ≤ f(x) ≤ g* + B₁ + B₂/(2μ)`
    pub f_range_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaB5Report {
    pub b1: f64,
    pub b2: f64,
    pub points: Vec<LemmaB5Point>,
    /// Largest `|f(x) − f(y)|` over pairs of stationary points.
    pub max_pair_gap: f64,
    /// `2B₁ + B₂/(2μ)`
    pub pair_bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaGapReport {
    pub mu_g: f64,
    pub g_star: f64,
    pub lemma1: Lemma1Report,
    pub lemma_b5: Option<LemmaB5Report>,
}

const SLACK: f64 = 1e-9;

fn le(a: f64, b: f64) -> bool {
    a <= b + SLACK * b.abs().max(1.0)
}

/// Evaluates both bounds over the given stationary points; the best of them
/// is taken as `x*`. Needs `μ_g` and the minimizer of `g`.
pub fn minima_gap_bounds(
    problem: &ProblemInstance,
    stationary: &[StationaryPoint],
    h: Option<HBounds>,
) -> Result<MinimaGapReport> {
    let c = problem.constants();
    let mu = c
        .mu_g
        .ok_or_else(|| LabError::NotApplicable("g is not known to be strongly convex".into()))?;
    let xg = c
        .x_g_star
        .as_ref()
        .ok_or_else(|| LabError::NotApplicable("minimizer of g unknown".into()))?;
    let best = stationary
        .iter()
        .min_by(|a, b| a.f.total_cmp(&b.f))
        .ok_or_else(|| LabError::invalid("stationary", "need at least one point"))?;
    let g_star = problem.value(Part::G, xg)?;
    let h_g = problem.value(Part::H, xg)?;
    let h_star = problem.value(Part::H, &best.x)?;
    let lhs = dist_sq(&best.x, xg);
    let rhs_printed = 2.0 / mu * (h_star - h_g);
    let rhs_corrected = 2.0 / mu * (h_g - h_star);
    let lemma1 = Lemma1Report {
        x_star: best.x.clone(),
        lhs,
        rhs_printed,
        rhs_corrected,
        holds_printed: le(lhs, rhs_printed),
        holds_corrected: le(lhs, rhs_corrected),
    };

    let lemma_b5 = h.map(|hb| {
        let upper_g = hb.b2 / (2.0 * mu);
        let points: Vec<LemmaB5Point> = stationary
            .iter()
            .map(|p| {
                let gap = problem.value_unchecked(Part::G, &p.x) - g_star;
                let dsq = dist_sq(&p.x, xg);
                LemmaB5Point {
                    x: p.x.clone(),
                    g_gap: gap,
                    dist_sq: dsq,
                    f: p.f,
                    value_ok: le(-SLACK, gap) && le(gap, upper_g),
                    distance_ok: le(dsq, hb.b2 / (mu * mu)),
                    f_range_ok: le(g_star - hb.b1, p.f) && le(p.f, g_star + hb.b1 + upper_g),
                }
            })
            .collect();
        let (fmin, fmax) = stationary
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.f), b.max(p.f)));
        let pair_bound = 2.0 * hb.b1 + upper_g;
        let max_pair_gap = fmax - fmin;
        let holds = points.iter().all(|p| p.value_ok && p.distance_ok && p.f_range_ok)
            && le(max_pair_gap, pair_bound);
        LemmaB5Report {
            b1: hb.b1,
            b2: hb.b2,
            points,
            max_pair_gap,
            pair_bound,
            holds,
        }
    });

    Ok(MinimaGapReport {
        mu_g: mu,
        g_star,
        lemma1,
        lemma_b5,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_sine_roots() {
        let p = ProblemInstance::toy_sine(10.0, 1.0).unwrap();
        let pts = stationary_points_1d(&p, -50.0, 50.0, 10_000, 1e-10).unwrap();
        assert!(pts.len() > 20);
        assert!(pts.iter().all(|s| s.certified), "{pts:?}");
        let best = pts.iter().min_by(|a, b| a.f.total_cmp(&b.f)).unwrap();
        assert!((best.x[0].abs() - 4.72).abs() < 0.02, "{:?}", best.x);
    }

    #[test]
    fn printed_orientation_fails_on_toy() {
        let p = ProblemInstance::toy_sine(10.0, 1.0).unwrap();
        let pts = stationary_points_1d(&p, -50.0, 50.0, 10_000, 1e-10).unwrap();
        let r = minima_gap_bounds(&p, &pts, HBounds::known(&p)).unwrap();
        assert!(r.lemma1.lhs > 20.0);
        assert!(!r.lemma1.holds_printed);
        assert!(r.lemma1.holds_corrected);
        assert!(r.lemma_b5.is_none());
    }

    #[test]
    fn bounded_perturbation_bounds() {
        let p = ProblemInstance::quadratic_with_sine(1, 1.0).unwrap();
        let pts = stationary_points_1d(&p, -10.0, 10.0, 10_000, 1e-10).unwrap();
        assert_eq!(pts.len(), 1);
        let r = minima_gap_bounds(&p, &pts, HBounds::known(&p)).unwrap();
        let b5 = r.lemma_b5.unwrap();
        assert!(b5.holds, "{b5:?}");
        assert!(r.lemma1.holds_corrected);
    }

    #[test]
    fn multistart_in_two_dimensions() {
        let p = ProblemInstance::quadratic_with_sine(2, 3.0).unwrap();
        let pts = stationary_points_multistart(&p, -5.0, 5.0, 30, 0.05, 1e-10, 100_000, 2).unwrap();
        assert!(!pts.is_empty());
        assert!(pts.iter().all(|s| s.certified));
        let b5 = minima_gap_bounds(&p, &pts, HBounds::known(&p)).unwrap().lemma_b5.unwrap();
        assert!(b5.holds, "{b5:?}");
    }

    #[test]
    fn needs_strong_convexity() {
        let data = crate::problems::Dataset::synthetic(20, 2, 0).unwrap();
        let p = ProblemInstance::finite_sum(data).unwrap();
        let pt = point(&p, vec![0.0; 3], 1e-10);
        assert!(matches!(minima_gap_bounds(&p, &[pt], None), Err(LabError::NotApplicable(_))));
    }
}
