//! Verification suites. Each returns check records; [`run`] assembles them
//! into a report.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use varlex_core::{DomainGrid, ExponentField, GridField};

use crate::config::{ExperimentConfig, Suite};
use crate::report::{CheckRecord, VerificationReport};

pub mod dyadic;
pub mod foundations;
pub mod matrix;
pub mod scalar;

/// Runs the configured suites. Suites run concurrently; the report lists
/// their records in suite order.
pub fn run(cfg: &ExperimentConfig) -> VerificationReport {
    let start = Instant::now();
    let suites = cfg.suites();
    let per_suite: Vec<Vec<CheckRecord>> = suites.par_iter().map(|&s| run_suite(cfg, s)).collect();
    VerificationReport::new(cfg.seed, per_suite.into_iter().flatten().collect(), start.elapsed().as_secs_f64())
}

pub fn run_suite(cfg: &ExperimentConfig, suite: Suite) -> Vec<CheckRecord> {
    match suite {
        Suite::Foundations => foundations::verify_foundations(cfg),
        Suite::TrivialWeight => scalar::verify_trivial_weight(cfg),
        Suite::Averaging => scalar::verify_averaging_characterization(cfg),
        Suite::Maximal => scalar::verify_maximal_boundedness(cfg),
        Suite::Cz => dyadic::verify_cz(cfg),
        Suite::Cover => dyadic::verify_shifted_cover(cfg),
        Suite::Matrix => matrix::verify_matrix_sandwich(cfg),
    }
}

/// `base + a·sin(ω x₀ + φ) + b·cos(ω' x₁)` with range inside `[lo, hi]`.
pub fn random_exponent<R: Rng>(grid: DomainGrid, rng: &mut R, lo: f64, hi: f64) -> ExponentField {
    let half = 0.5 * (hi - lo);
    let amp = rng.gen_range(0.0..0.9) * half;
    let base = rng.gen_range(lo + amp..=hi - amp);
    let (w0, phase) = (rng.gen_range(0.5..6.0), rng.gen_range(0.0..std::f64::consts::TAU));
    let w1 = rng.gen_range(0.5..4.0);
    let split = rng.gen_range(0.0..1.0);
    ExponentField::from_fn(grid, |x| base + amp * (split * (w0 * x[0] + phase).sin() + (1.0 - split) * (w1 * x[1]).cos()))
        .expect("range stays above one")
}

/// Random piecewise values with a smooth component, of random overall scale.
pub fn random_signed<R: Rng>(grid: DomainGrid, rng: &mut R) -> GridField {
    let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
    let (w, phase) = (rng.gen_range(0.5..8.0), rng.gen_range(0.0..std::f64::consts::TAU));
    let vals = (0..grid.n_cells())
        .map(|i| {
            let x = grid.cell_center(i);
            scale * ((w * x[0] + phase).sin() + rng.gen_range(-1.0..1.0))
        })
        .collect();
    GridField::new(grid, vals).expect("grid-sized")
}

/// Positive random input: absolute value of [`random_signed`] plus sparse spikes.
pub fn random_positive<R: Rng>(grid: DomainGrid, rng: &mut R) -> GridField {
    let mut f = random_signed(grid, rng).abs();
    let peak = f.max_abs().max(1e-3);
    for v in f.values_mut() {
        if rng.gen_bool(0.02) {
            *v += peak * rng.gen_range(1.0..20.0);
        }
    }
    f
}

/// A random weight of one of the configurable shapes.
pub fn random_weight<R: Rng>(grid: DomainGrid, rng: &mut R) -> GridField {
    match rng.gen_range(0..3) {
        0 => {
            let spread: f64 = rng.gen_range(0.1..1.5);
            let vals = (0..grid.n_cells()).map(|_| rng.gen_range(-spread..=spread).exp()).collect();
            GridField::new(grid, vals).expect("grid-sized")
        }
        1 => {
            let (gamma, offset) = (rng.gen_range(-0.3..0.3), rng.gen_range(0.02..0.5));
            GridField::from_fn(grid, |x| (offset + (x[0] * x[0] + x[1] * x[1]).sqrt()).powf(gamma))
        }
        _ => {
            let (amp, c, width) = (rng.gen_range(-2.0..2.0), rng.gen_range(-0.8..0.8), rng.gen_range(0.05..0.5));
            GridField::from_fn(grid, |x| {
                let r2 = (x[0] - c) * (x[0] - c) + x[1] * x[1];
                (amp * (-r2 / (width * width)).exp()).exp()
            })
        }
    }
}

/// Largest relative deviation `|a − b| / max(|b|, tiny)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
