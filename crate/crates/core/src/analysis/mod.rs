//! Constant estimation, iteration bounds, and Monte Carlo checks of the
//! convergence envelopes.

mod bounds;
mod envelope;
mod equivalence;
mod estimate;
mod progress;
mod stationary;

use rayon::prelude::*;

pub use bounds::{
    iteration_bound, step_cap, t1_envelope, t1_floor, t2_envelope, t2_half_xi, t3_envelope,
    t3_xi, IterationBound,
};
pub use envelope::{envelope_check, EnvelopeReport, GapPanel, PanelOptions};
pub use equivalence::{
    coupled_smoothing, equivalence_report, EquivalenceReport, EquivalenceStep, Lemma4Check,
};
pub use estimate::{
    estimate_assumptions, fit_linear_envelope, fit_noise_constants, fit_structure_constants,
    required_intercept, slope_grid, AssumptionEstimate, DirectionalFit, EnvelopeFit, NoiseFit,
    NoisePoint, StructureFit, StructureMode, StructurePoint,
};
pub use progress::{one_step_progress, OneStepReport};
pub use stationary::{
    minima_gap_bounds, stationary_points_1d, stationary_points_multistart, HBounds, Lemma1Report,
    LemmaB5Point, LemmaB5Report, MinimaGapReport, StationaryPoint,
};

/// Number of replicas simulated per parallel batch before their results are
/// folded, in index order, into the running statistics.
const BATCH: usize = 128;

/// Maps `0..n` in parallel batches and hands results to `consume` in index
/// order, so reductions are deterministic.
pub(crate) fn map_ordered<T, F, C>(n: usize, map: F, mut consume: C)
where
    T: Send,
    F: Fn(usize) -> T + Sync,
    C: FnMut(usize, T),
{
    let mut start = 0;
    while start < n {
        let end = (start + BATCH).min(n);
        let out: Vec<T> = (start..end).into_par_iter().map(&map).collect();
        for (i, item) in out.into_iter().enumerate() {
            consume(start + i, item);
        }
        start = end;
    }
}
