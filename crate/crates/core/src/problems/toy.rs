//! Closed-form Gaussian smoothing of the toy and valley objectives, and their
//! structural constants.

use serde::{Deserialize, Serialize};

use super::{Family, ProblemInstance};
use crate::error::{LabError, Result};

/// Smoothed toy objective `f_U(x) = E f(x − u)`, `u ~ N(0, ζ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToySmoothed {
    pub f_u: f64,
    pub g_u: f64,
    pub h_u: f64,
    pub grad_f_u: f64,
    pub grad_g_u: f64,
    pub grad_h_u: f64,
}

fn check_toy_args(a: f64, b: f64, zeta: f64, x: f64) -> Result<()> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(LabError::invalid("a", "must be positive and finite"));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(LabError::invalid("b", "must be positive and finite"));
    }
    if !(zeta >= 0.0 && zeta.is_finite()) {
        return Err(LabError::invalid("zeta", "must be finite and non-negative"));
    }
    if !x.is_finite() {
        return Err(LabError::NonFinite { index: 0 });
    }
    Ok(())
}

/// Exact Gaussian convolution of `x² + a·x·sin(bx)`.
///
/// With `c = b²ζ²`:
/// `h_U(x) = a·e^{−c/2}·(bζ²·cos bx + x·sin bx)` and
/// `h_U'(x) = a·e^{−c/2}·((1 − c)·sin bx + bx·cos bx)`.
pub fn toy_smoothed_closed_form(a: f64, b: f64, zeta: f64, x: f64) -> Result<ToySmoothed> {
    check_toy_args(a, b, zeta, x)?;
    let z2 = zeta * zeta;
    let c = b * b * z2;
    let damp = (-0.5 * c).exp();
    let (s, co) = (b * x).sin_cos();
    let g_u = x * x + z2;
    let h_u = a * damp * (b * z2 * co + x * s);
    let grad_g_u = 2.0 * x;
    let grad_h_u = a * damp * ((1.0 - c) * s + b * x * co);
    Ok(ToySmoothed {
        f_u: g_u + h_u,
        g_u,
        h_u,
        grad_f_u: grad_g_u + grad_h_u,
        grad_g_u,
        grad_h_u,
    })
}

/// `∇h_U` in the commonly quoted form `ab·e^{−b²ζ²/2}((1/b − ζ²)·b·sin bx + x·cos bx)`.
///
/// Agrees with [`toy_smoothed_closed_form`] only when `b = 1`; kept so the
/// discrepancy stays testable.
pub fn toy_grad_h_smoothed_as_printed(a: f64, b: f64, zeta: f64, x: f64) -> Result<f64> {
    check_toy_args(a, b, zeta, x)?;
    let z2 = zeta * zeta;
    let damp = (-0.5 * b * b * z2).exp();
    Ok(a * b * damp * ((1.0 / b - z2) * b * (b * x).sin() + x * (b * x).cos()))
}

/// Smoothed gradient of the valley objective under `N(0, s²·I)`, where `s` is
/// the per-coordinate standard deviation.
pub fn valley_smoothed_gradient(alpha: f64, lambda: f64, s: f64, x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    let v = lambda * lambda + s * s;
    let y = x[0] - 1.0;
    out[0] += alpha * lambda * y / v.powf(1.5) * (-y * y / (2.0 * v)).exp();
    out
}

/// Constants `(m, Δ)` with `‖∇f_U − ∇g‖² ≤ Δ + m‖∇g‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticConstants {
    pub m: f64,
    pub delta: f64,
}

/// Closed-form structural constants under Gaussian smoothing of width `zeta`.
///
/// ToySine: `m = ¼a²b²e^{−b²ζ²}`, `Δ = a²e^{−b²ζ²}(1 − b²ζ²)²`.
/// Valley (`zeta` is the per-coordinate std, `k = ζ/λ`):
/// `m = Δ = α²k⁴/((k²+1)³λ⁴)`.
pub fn analytic_assumption_constants(problem: &ProblemInstance, zeta: f64) -> Result<AnalyticConstants> {
    if !(zeta >= 0.0 && zeta.is_finite()) {
        return Err(LabError::invalid("zeta", "must be finite and non-negative"));
    }
    let constants = match problem.family() {
        Family::ToySine { a, b } => {
            let c = b * b * zeta * zeta;
            let e = (-c).exp();
            AnalyticConstants {
                m: 0.25 * a * a * b * b * e,
                delta: a * a * e * (1.0 - c) * (1.0 - c),
            }
        }
        Family::Valley { alpha, lambda } => {
            let k2 = (zeta / lambda).powi(2);
            let v = alpha * alpha * k2 * k2 / ((k2 + 1.0).powi(3) * lambda.powi(4));
            AnalyticConstants { m: v, delta: v }
        }
        _ => {
            return Err(LabError::Unsupported {
                operation: "analytic structure constants",
                what: problem.describe(),
            })
        }
    };
    if constants.m >= 1.0 {
        return Err(LabError::AssumptionViolated(format!(
            "m = {} >= 1 at zeta = {zeta}",
            constants.m
        )));
    }
    Ok(constants)
}

/// Smallest `ζ` for which the toy constants satisfy `m < 1`.
pub fn toy_min_zeta(a: f64, b: f64) -> f64 {
    let r = 2.0 * (a * b).ln() - 4f64.ln();
    if r <= 0.0 {
        0.0
    } else {
        r.sqrt() / b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Part;

    #[test]
    fn zero_width_is_identity() {
        let p = ProblemInstance::toy_sine(10.0, 1.0).unwrap();
        for &x in &[-7.3, -1.0, 0.0, 0.4, 3.3, 9.9] {
            let s = toy_smoothed_closed_form(10.0, 1.0, 0.0, x).unwrap();
            let f = p.value(Part::F, &[x]).unwrap();
            let df = p.gradient(Part::F, &[x]).unwrap()[0];
            assert!((s.f_u - f).abs() <= 1e-12 * (1.0 + f.abs()));
            assert!((s.grad_f_u - df).abs() <= 1e-12 * (1.0 + df.abs()));
        }
    }

    #[test]
    fn value_at_origin() {
        let s = toy_smoothed_closed_form(10.0, 1.0, 2.0, 0.0).unwrap();
        let expected = 4.0 + 40.0 * (-2.0f64).exp();
        assert!((s.f_u - expected).abs() < 1e-12);
        assert!((s.f_u - 9.4134).abs() < 1e-4);
    }

    #[test]
    fn smoothed_roots_near_2_56() {
        let df = |x: f64| toy_smoothed_closed_form(10.0, 1.0, 2.0, x).unwrap().grad_f_u;
        assert_eq!(df(0.0), 0.0);
        let (mut lo, mut hi) = (2.0, 3.0);
        assert!(df(lo) * df(hi) < 0.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if df(lo) * df(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((lo - 2.56).abs() < 0.01, "root {lo}");
        assert!(df(-lo).abs() < 1e-9);
    }

    #[test]
    fn printed_gradient_matches_only_for_unit_frequency() {
        for &x in &[-3.0, 0.7, 5.0] {
            let good = toy_smoothed_closed_form(10.0, 1.0, 1.3, x).unwrap().grad_h_u;
            let printed = toy_grad_h_smoothed_as_printed(10.0, 1.0, 1.3, x).unwrap();
            assert!((good - printed).abs() < 1e-12);
        }
        let good = toy_smoothed_closed_form(10.0, 2.0, 1.0, 0.7).unwrap().grad_h_u;
        let printed = toy_grad_h_smoothed_as_printed(10.0, 2.0, 1.0, 0.7).unwrap();
        assert!((good - printed).abs() > 1e-3);
    }

    #[test]
    fn negative_zeta_rejected() {
        assert!(toy_smoothed_closed_form(10.0, 1.0, -0.1, 0.0).is_err());
    }

    #[test]
    fn toy_constants() {
        let p = ProblemInstance::toy_sine(10.0, 1.0).unwrap();
        let zeta = (2.0 * 10f64.ln() - 4f64.ln() + 1.0).sqrt();
        let c = analytic_assumption_constants(&p, zeta).unwrap();
        assert!((c.m - (-1f64).exp()).abs() < 1e-12);
        let c = analytic_assumption_constants(&p, 1.0).unwrap_err();
        assert!(matches!(c, LabError::AssumptionViolated(_)));
        assert!((toy_min_zeta(10.0, 1.0) - 1.7941).abs() < 1e-3);
    }

    #[test]
    fn toy_delta_vanishes_at_unit_width() {
        let p = ProblemInstance::toy_sine(0.5, 1.0).unwrap();
        let c = analytic_assumption_constants(&p, 1.0).unwrap();
        assert_eq!(c.delta, 0.0);
    }

    #[test]
    fn valley_constants_at_k1() {
        let p = ProblemInstance::valley(1.0 / 200.0, 0.1, 3).unwrap();
        let c = analytic_assumption_constants(&p, 0.1).unwrap();
        let expected = (1.0f64 / 200.0).powi(2) / (8.0 * 0.1f64.powi(4));
        assert!((c.m - expected).abs() < 1e-12 * expected);
        assert_eq!(c.m, c.delta);
    }

    #[test]
    fn valley_smoothing_zero_width() {
        let p = ProblemInstance::valley(0.005, 0.1, 2).unwrap();
        let x = [1.07, 0.3];
        let a = valley_smoothed_gradient(0.005, 0.1, 0.0, &x);
        let b = p.gradient(Part::F, &x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }
    }
}
