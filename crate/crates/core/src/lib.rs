//! Perturbed SGD laboratory.
//!
//! Objectives of the form `f = g + h` (a convex-like part plus a non-convex
//! perturbation), gradient descent, SGD and perturbed SGD with full trajectory
//! recording, estimators for the noise and structure constants that drive the
//! convergence theory, and a harness that runs the desk-scale experiments and
//! writes plot-ready reports.

pub mod analysis;
pub mod error;
pub mod harness;
pub mod optimizers;
pub mod problems;
pub mod quadrature;
pub mod rng;
pub mod smoothing;
pub mod stats;
mod vecops;

pub use error::{LabError, Result};
pub use optimizers::{Algorithm, OptimizerConfig, Trajectory};
pub use problems::{Dataset, Family, Kind, NoiseSpec, Part, ProblemInstance};
pub use rng::{Purpose, StreamKey};
pub use smoothing::SmoothingSpec;
