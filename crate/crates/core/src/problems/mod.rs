//! Benchmark objectives `f = g + h` with exact and stochastic gradient
//! oracles.
//!
//! The split into `g` (convex-like part) and `h` (non-convex perturbation) is
//! never visible to the optimizers; it exists for analysis and testing.

mod dataset;
mod toy;

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::vecops::{dot, norm_sq};

pub use dataset::{build_finite_sum_problem, DataSource, Dataset};
pub use toy::{
    analytic_assumption_constants, toy_grad_h_smoothed_as_printed, toy_smoothed_closed_form,
    toy_min_zeta, valley_smoothed_gradient, AnalyticConstants, ToySmoothed,
};

/// Which part of `f = g + h` to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Part {
    F,
    G,
    H,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kind {
    Value,
    Gradient,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Evaluation {
    Value(f64),
    Gradient(Vec<f64>),
}

/// Logistic-regression terms with a constant-1 bias column appended to the
/// raw features.
#[derive(Debug, Clone)]
pub struct LogisticData {
    dataset: Dataset,
    /// Row-major `n × (d + 1)` design matrix.
    design: Vec<f64>,
    labels: Vec<f64>,
    cols: usize,
}

impl LogisticData {
    fn new(dataset: Dataset) -> Self {
        let cols = dataset.d() + 1;
        let mut design = Vec::with_capacity(dataset.n() * cols);
        for i in 0..dataset.n() {
            design.extend_from_slice(dataset.row(i));
            design.push(1.0);
        }
        let labels = dataset.labels().iter().map(|&y| f64::from(y)).collect();
        Self {
            dataset,
            design,
            labels,
            cols,
        }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.design[i * self.cols..(i + 1) * self.cols]
    }

    fn term_value(&self, i: usize, x: &[f64]) -> f64 {
        let z = dot(self.row(i), x);
        softplus(z) - self.labels[i] * z
    }

    /// `out += scale * ∇f_i(x)`
    fn add_term_grad(&self, i: usize, x: &[f64], scale: f64, out: &mut [f64]) {
        let row = self.row(i);
        let coef = scale * (sigmoid(dot(row, x)) - self.labels[i]);
        for (o, a) in out.iter_mut().zip(row) {
            *o += coef * a;
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let n = self.n() as f64;
        (0..self.n()).map(|i| self.term_value(i, x)).sum::<f64>() / n
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let scale = 1.0 / self.n() as f64;
        for i in 0..self.n() {
            self.add_term_grad(i, x, scale, out);
        }
    }

    /// Largest eigenvalue of `AᵀA / (4n)`, the smoothness constant of the
    /// mean cross-entropy loss.
    fn smoothness(&self) -> f64 {
        let c = self.cols;
        let mut gram = vec![0.0; c * c];
        for i in 0..self.n() {
            let row = self.row(i);
            for p in 0..c {
                for q in 0..c {
                    gram[p * c + q] += row[p] * row[q];
                }
            }
        }
        let mut v = vec![1.0 / (c as f64).sqrt(); c];
        let mut lambda = 0.0;
        for _ in 0..1000 {
            let mut w = vec![0.0; c];
            for p in 0..c {
                w[p] = dot(&gram[p * c..(p + 1) * c], &v);
            }
            let norm = norm_sq(&w).sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            let next = dot(&w, &v);
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / norm;
            }
            if (next - lambda).abs() <= 1e-13 * next.abs() {
                lambda = next;
                break;
            }
            lambda = next;
        }
        lambda / (4.0 * self.n() as f64)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub enum Family {
    /// `g(x) = x²`, `h(x) = a·x·sin(b·x)` in one dimension.
    ToySine { a: f64, b: f64 },
    /// `g(x) = ½‖x‖²`, `h(x) = −α·exp(−(x₁ − 1)² / (2λ²))`.
    Valley { alpha: f64, lambda: f64 },
    /// `g(x) = ‖x‖²`, `h(x) = s·Σ sin(xᵢ)` (`s = 0` gives the plain quadratic).
    Quadratic { sine: f64 },
    /// Mean cross-entropy of logistic regression; `g = f`, `h = 0`.
    FiniteSum(Arc<LogisticData>),
}

/// Known structural constants of `g`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StructuralConstants {
    pub l_g: Option<f64>,
    pub mu_g: Option<f64>,
    pub x_g_star: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    family: Family,
    dimension: usize,
    constants: StructuralConstants,
}

impl ProblemInstance {
    pub fn toy_sine(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(LabError::invalid("a", "must be positive and finite"));
        }
        if !(b > 0.0 && b.is_finite()) {
            return Err(LabError::invalid("b", "must be positive and finite"));
        }
        Ok(Self {
            family: Family::ToySine { a, b },
            dimension: 1,
            constants: StructuralConstants {
                l_g: Some(2.0),
                mu_g: Some(2.0),
                x_g_star: Some(vec![0.0]),
            },
        })
    }

    pub fn valley(alpha: f64, lambda: f64, dimension: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(LabError::invalid("alpha", "must be positive and finite"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(LabError::invalid("lambda", "must be positive and finite"));
        }
        if dimension == 0 {
            return Err(LabError::invalid("dimension", "must be at least 1"));
        }
        Ok(Self {
            family: Family::Valley { alpha, lambda },
            dimension,
            constants: StructuralConstants {
                l_g: Some(1.0),
                mu_g: Some(1.0),
                x_g_star: Some(vec![0.0; dimension]),
            },
        })
    }

    pub fn quadratic(dimension: usize) -> Result<Self> {
        Self::quadratic_with_sine(dimension, 0.0)
    }

    /// `‖x‖² + s·Σ sin(xᵢ)`: bounded perturbation with bounded gradient.
    pub fn quadratic_with_sine(dimension: usize, sine: f64) -> Result<Self> {
        if dimension == 0 {
            return Err(LabError::invalid("dimension", "must be at least 1"));
        }
        if !sine.is_finite() {
            return Err(LabError::invalid("sine", "must be finite"));
        }
        Ok(Self {
            family: Family::Quadratic { sine },
            dimension,
            constants: StructuralConstants {
                l_g: Some(2.0),
                mu_g: Some(2.0),
                x_g_star: Some(vec![0.0; dimension]),
            },
        })
    }

    pub fn finite_sum(dataset: Dataset) -> Result<Self> {
        if dataset.n() == 0 {
            return Err(LabError::invalid("dataset", "finite sum needs n >= 1"));
        }
        let data = LogisticData::new(dataset);
        let dimension = data.cols;
        let l_g = data.smoothness();
        Ok(Self {
            family: Family::FiniteSum(Arc::new(data)),
            dimension,
            constants: StructuralConstants {
                l_g: Some(l_g),
                mu_g: None,
                x_g_star: None,
            },
        })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn constants(&self) -> &StructuralConstants {
        &self.constants
    }

    /// Number of terms for finite-sum problems.
    pub fn n_components(&self) -> Option<usize> {
        match &self.family {
            Family::FiniteSum(data) => Some(data.n()),
            _ => None,
        }
    }

    pub fn is_finite_sum(&self) -> bool {
        matches!(self.family, Family::FiniteSum(_))
    }

    /// Short human-readable description for manifests.
    pub fn describe(&self) -> String {
        match &self.family {
            Family::ToySine { a, b } => format!("toy_sine(a={a}, b={b})"),
            Family::Valley { alpha, lambda } => {
                format!("valley(alpha={alpha}, lambda={lambda}, d={})", self.dimension)
            }
            Family::Quadratic { sine } => format!("quadratic(sine={sine}, d={})", self.dimension),
            Family::FiniteSum(data) => format!(
                "logistic(n={}, d={}, bias column)",
                data.n(),
                data.dataset.d()
            ),
        }
    }

    pub(crate) fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension {
            return Err(LabError::DimensionMismatch {
                expected: self.dimension,
                got: x.len(),
            });
        }
        if let Some(index) = x.iter().position(|v| !v.is_finite()) {
            return Err(LabError::NonFinite { index });
        }
        Ok(())
    }

    pub fn eval(&self, part: Part, kind: Kind, x: &[f64]) -> Result<Evaluation> {
        Ok(match kind {
            Kind::Value => Evaluation::Value(self.value(part, x)?),
            Kind::Gradient => Evaluation::Gradient(self.gradient(part, x)?),
        })
    }

    pub fn value(&self, part: Part, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.value_unchecked(part, x))
    }

    pub fn gradient(&self, part: Part, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut out = vec![0.0; self.dimension];
        self.grad_into(part, x, &mut out);
        Ok(out)
    }

    pub(crate) fn value_unchecked(&self, part: Part, x: &[f64]) -> f64 {
        match part {
            Part::F => self.g_value(x) + self.h_value(x),
            Part::G => self.g_value(x),
            Part::H => self.h_value(x),
        }
    }

    fn g_value(&self, x: &[f64]) -> f64 {
        match &self.family {
            Family::ToySine { .. } | Family::Quadratic { .. } => norm_sq(x),
            Family::Valley { .. } => 0.5 * norm_sq(x),
            Family::FiniteSum(data) => data.value(x),
        }
    }

    fn h_value(&self, x: &[f64]) -> f64 {
        match &self.family {
            Family::ToySine { a, b } => a * x[0] * (b * x[0]).sin(),
            Family::Valley { alpha, lambda } => {
                let y = x[0] - 1.0;
                -alpha * (-y * y / (2.0 * lambda * lambda)).exp()
            }
            Family::Quadratic { sine } => {
                if *sine == 0.0 {
                    0.0
                } else {
                    sine * x.iter().map(|v| v.sin()).sum::<f64>()
                }
            }
            Family::FiniteSum(_) => 0.0,
        }
    }

    /// Writes the requested gradient into `out` (overwriting it).
    pub(crate) fn grad_into(&self, part: Part, x: &[f64], out: &mut [f64]) {
        match part {
            Part::G => self.g_grad_into(x, out),
            Part::H => {
                out.fill(0.0);
                self.h_grad_add(x, out);
            }
            Part::F => {
                self.g_grad_into(x, out);
                self.h_grad_add(x, out);
            }
        }
    }

    fn g_grad_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.family {
            Family::ToySine { .. } | Family::Quadratic { .. } => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = 2.0 * v;
                }
            }
            Family::Valley { .. } => out.copy_from_slice(x),
            Family::FiniteSum(data) => data.grad_into(x, out),
        }
    }

    fn h_grad_add(&self, x: &[f64], out: &mut [f64]) {
        match &self.family {
            Family::ToySine { a, b } => {
                let bx = b * x[0];
                out[0] += a * bx.sin() + a * bx * bx.cos();
            }
            Family::Valley { alpha, lambda } => {
                let y = x[0] - 1.0;
                let l2 = lambda * lambda;
                out[0] += alpha * y / l2 * (-y * y / (2.0 * l2)).exp();
            }
            Family::Quadratic { sine } => {
                if *sine != 0.0 {
                    for (o, v) in out.iter_mut().zip(x) {
                        *o += sine * v.cos();
                    }
                }
            }
            Family::FiniteSum(_) => {}
        }
    }

    /// `out = ∇f_i(x)` for finite-sum problems.
    pub(crate) fn component_grad_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        match &self.family {
            Family::FiniteSum(data) => {
                out.fill(0.0);
                data.add_term_grad(i, x, 1.0, out);
            }
            _ => unreachable!("component gradient requested for a non-finite-sum problem"),
        }
    }

    /// `∇f_i(x)` with bounds and shape checks.
    pub fn component_gradient(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let n = self.n_components().ok_or_else(|| LabError::Unsupported {
            operation: "component gradient",
            what: self.describe(),
        })?;
        if i >= n {
            return Err(LabError::invalid("index", format!("{i} out of range for n={n}")));
        }
        let mut out = vec![0.0; self.dimension];
        self.component_grad_into(i, x, &mut out);
        Ok(out)
    }

    /// Single-term value `f_i(x)`.
    pub fn component_value(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        match &self.family {
            Family::FiniteSum(data) if i < data.n() => Ok(data.term_value(i, x)),
            Family::FiniteSum(data) => Err(LabError::invalid(
                "index",
                format!("{i} out of range for n={}", data.n()),
            )),
            _ => Err(LabError::Unsupported {
                operation: "component value",
                what: self.describe(),
            }),
        }
    }
}

/// Gradient-noise model of the stochastic oracle `∇f(x, ξ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    None,
    /// Additive `N(0, variance)` on every coordinate.
    Gaussian { variance: f64 },
    /// Uniform single-index sampling of a finite-sum term.
    SingleIndex,
}

impl NoiseSpec {
    pub fn is_none(&self) -> bool {
        matches!(self, NoiseSpec::None)
            || matches!(self, NoiseSpec::Gaussian { variance } if *variance == 0.0)
    }

    pub(crate) fn validate(&self, problem: &ProblemInstance) -> Result<()> {
        match self {
            NoiseSpec::None => Ok(()),
            NoiseSpec::Gaussian { variance } => {
                if *variance >= 0.0 && variance.is_finite() {
                    Ok(())
                } else {
                    Err(LabError::invalid("variance", "must be finite and non-negative"))
                }
            }
            NoiseSpec::SingleIndex => match problem.n_components() {
                Some(n) if n > 0 => Ok(()),
                Some(_) => Err(LabError::invalid("noise", "finite sum with n = 0")),
                None => Err(LabError::Unsupported {
                    operation: "single-index sampling",
                    what: problem.describe(),
                }),
            },
        }
    }
}

/// One draw of the stochastic gradient `∇f(x, ξ)`; unbiased for `∇f(x)`.
pub fn stochastic_grad<R: Rng + ?Sized>(
    problem: &ProblemInstance,
    x: &[f64],
    rng: &mut R,
    noise: NoiseSpec,
) -> Result<Vec<f64>> {
    problem.check_point(x)?;
    noise.validate(problem)?;
    let mut out = vec![0.0; problem.dimension()];
    stochastic_grad_into(problem, x, rng, noise, &mut out);
    Ok(out)
}

pub(crate) fn stochastic_grad_into<R: Rng + ?Sized>(
    problem: &ProblemInstance,
    x: &[f64],
    rng: &mut R,
    noise: NoiseSpec,
    out: &mut [f64],
) {
    match noise {
        NoiseSpec::None => problem.grad_into(Part::F, x, out),
        NoiseSpec::Gaussian { variance } => {
            problem.grad_into(Part::F, x, out);
            if variance > 0.0 {
                let sd = variance.sqrt();
                for o in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *o += sd * z;
                }
            }
        }
        NoiseSpec::SingleIndex => {
            let n = problem.n_components().expect("validated finite sum");
            let i = rng.random_range(0..n);
            problem.component_grad_into(i, x, out);
        }
    }
}
