//! Matrix weights: reducing-operator certification, the two computations of
//! the matrix weight constant, the averaging bound and scalar projections.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use varlex_core::{
    apq_constant, averaging_ratio, christ_goldberg, derive_q, dyadic_family, held_out_directions, luxemburg_norm,
    matrix_apq_direct, matrix_apq_reduced, reducing_operator, scalar_projections, CubeFamily, DomainGrid,
    ExponentField, GridField, MatrixWeightField, ReducingOptions, Side, VectorField,
};

use super::{random_exponent, random_weight, rel_err};
use crate::config::{ExperimentConfig, Suite};
use crate::report::{timed, CheckRecord};

const ANCHOR_SANDWICH: &str = "reducing operators: <r>(v) <= |Mv| <= sqrt(d) <r>(v) from the John ellipsoid";
const ANCHOR_TWO_PATH: &str = "the matrix weight constant is equivalent to sup_Q ||W_Q^q W'_Q^p'|| with constants depending on d";
const ANCHOR_FACTOR4: &str = "matrix averaging operators: ||A_Q||_{L^p(W) -> L^q(W)} <= 4 [W]";
const ANCHOR_CG: &str = "bounded Christ-Goldberg maximal operator implies a finite matrix weight constant";
const ANCHOR_PROJECTION: &str = "scalar reductions: [|We|] <= [W] and [||W||] <= d [W]";

pub fn verify_matrix_sandwich(cfg: &ExperimentConfig) -> Vec<CheckRecord> {
    let mut out = timed("matrix.random", ANCHOR_SANDWICH, Some(7), || random_fields(cfg));
    out.extend(timed("matrix.identity", ANCHOR_TWO_PATH, Some(7), || identity(cfg)));
    out.extend(timed("matrix.scalar-collapse", ANCHOR_TWO_PATH, Some(7), || scalar_collapse(cfg)));
    out
}

fn grid(cfg: &ExperimentConfig) -> anyhow::Result<DomainGrid> {
    cfg.grid.with_cells(cfg.matrix.cells).build()
}

fn options(cfg: &ExperimentConfig) -> ReducingOptions {
    ReducingOptions {
        directions: cfg.matrix.directions,
        slack: cfg.tolerances.mvee_slack,
        ..ReducingOptions::default()
    }
}

/// `W(x) = exp(S(x))` for a smooth random symmetric `S`.
fn random_matrix_field<R: Rng>(g: DomainGrid, d: usize, rng: &mut R) -> anyhow::Result<MatrixWeightField> {
    let coeffs: Vec<[f64; 5]> = (0..d * d)
        .map(|k| {
            let diag = k / d == k % d;
            let amp = if diag { 1.0 } else { 0.7 };
            [
                rng.gen_range(-amp..amp),
                rng.gen_range(-amp..amp),
                rng.gen_range(0.5..5.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(-0.5..0.5),
            ]
        })
        .collect();
    Ok(MatrixWeightField::from_fn(g, d, |x| {
        let s = DMatrix::from_fn(d, d, |i, j| {
            let c = coeffs[i.min(j) * d + i.max(j)];
            c[0] + c[1] * (c[2] * x[0] + c[3]).sin() + c[4] * x[1]
        });
        let eig = s.symmetric_eigen();
        let e = &eig.eigenvectors;
        let m = e * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::exp)) * e.transpose();
        (&m + m.transpose()) * 0.5
    })?)
}

/// `⟨r⟩(v) = |Q|^{−1/r_Q}‖χ_Q |A(·)v|‖_{r(·)}` by plain bisection on the
/// modular, with `r_Q` the harmonic mean of `r` over the cells.
fn oracle_avg_norm(mats: &[DMatrix<f64>], r: &ExponentField, cells: &[usize], h: f64, v: &DVector<f64>) -> f64 {
    let vals: Vec<f64> = cells.iter().map(|&c| (&mats[c] * v).norm()).collect();
    let exps: Vec<f64> = cells.iter().map(|&c| r.values()[c]).collect();
    let top = vals.iter().copied().fold(0.0, f64::max);
    let rho = |lam: f64| vals.iter().zip(&exps).map(|(a, e)| (a / lam).powf(*e)).sum::<f64>() * h;
    let (mut lo, mut hi) = (top * 1e-6, top * 1e6);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if rho(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    let r_q = exps.len() as f64 / exps.iter().map(|e| e.recip()).sum::<f64>();
    (cells.len() as f64 * h).powf(-r_q.recip()) * (lo * hi).sqrt()
}

#[derive(Default)]
struct SandwichCheck {
    operators: usize,
    failures: Vec<String>,
    min_lower: f64,
    max_upper: f64,
    fresh_min: f64,
    fresh_max: f64,
}

/// Certifies both reducing operators on every cube and re-checks them on the
/// held-out directions against the oracle.
fn certify(
    cfg: &ExperimentConfig,
    w: &MatrixWeightField,
    p: &ExponentField,
    q: &ExponentField,
    fam: &CubeFamily,
    trial: u64,
) -> anyhow::Result<SandwichCheck> {
    let g = *w.grid();
    let d = w.d();
    let opts = options(cfg);
    let pc = p.conjugate()?;
    let held = held_out_directions(d, opts.holdout);
    let mut rng = cfg.rng(Suite::Matrix, (1 << 30) | trial);
    let fresh: Vec<DVector<f64>> = (0..64)
        .map(|_| {
            let v = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            let r = v.norm();
            v / r
        })
        .collect();
    let results: Vec<Result<(f64, f64, f64, f64), String>> = fam
        .cubes
        .par_iter()
        .flat_map_iter(|c| [(c, Side::Primal), (c, Side::Dual)])
        .map(|(c, side)| {
            let (mats, r) = match side {
                Side::Primal => (w.values(), q),
                Side::Dual => (w.inverses(), &pc),
            };
            let op = reducing_operator(w, r, side, c, &opts).map_err(|e| format!("{c} {side:?}: {e}"))?;
            let cells: Vec<usize> = c.cell_box(&g).cells(&g).collect();
            let h = g.cell_volume();
            let ratio = |v: &DVector<f64>| op.apply_norm(v) / oracle_avg_norm(mats, r, &cells, h, v);
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for v in &held {
                let t = ratio(v);
                lo = lo.min(t);
                hi = hi.max(t);
            }
            let (mut flo, mut fhi) = (f64::INFINITY, 0.0f64);
            for v in &fresh {
                let t = ratio(v);
                flo = flo.min(t);
                fhi = fhi.max(t);
            }
            Ok((lo, hi, flo, fhi))
        })
        .collect();
    let mut out = SandwichCheck { min_lower: f64::INFINITY, fresh_min: f64::INFINITY, ..Default::default() };
    for r in results {
        out.operators += 1;
        match r {
            Ok((lo, hi, flo, fhi)) => {
                out.min_lower = out.min_lower.min(lo);
                out.max_upper = out.max_upper.max(hi);
                out.fresh_min = out.fresh_min.min(flo);
                out.fresh_max = out.fresh_max.max(fhi);
            }
            Err(e) => out.failures.push(e),
        }
    }
    Ok(out)
}

/// Vector probes on `Q`: constant basis vectors, `W^{−1}e` and random ones.
fn vector_probes<R: Rng>(w: &MatrixWeightField, cells: &[usize], extra: usize, rng: &mut R) -> Vec<VectorField> {
    let g = *w.grid();
    let d = w.d();
    let on_cube = |f: &dyn Fn(usize) -> DVector<f64>| {
        let mut vals = vec![DVector::zeros(d); g.n_cells()];
        for &c in cells {
            vals[c] = f(c);
        }
        VectorField::new(g, d, vals).expect("grid-sized")
    };
    let mut out = Vec::new();
    for i in 0..d {
        let e = DVector::from_fn(d, |j, _| f64::from(u8::from(i == j)));
        out.push(on_cube(&|_| e.clone()));
        out.push(on_cube(&|c| &w.inverses()[c] * &e));
    }
    for _ in 0..extra {
        let vals: Vec<DVector<f64>> = cells.iter().map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0))).collect();
        out.push(on_cube(&|c| vals[cells.iter().position(|&k| k == c).expect("cell in cube")].clone()));
    }
    out
}

struct ConfigOutcome {
    sandwich: SandwichCheck,
    direct: f64,
    reduced: f64,
    commutation_gap: f64,
    max_sandwich: f64,
    factor4_worst: f64,
    factor4_violations: usize,
    averaging_lower: f64,
    cg_ratio: f64,
    norm_constant: f64,
    projection_constant: f64,
    c_d: f64,
    triangle: bool,
}

fn run_config(cfg: &ExperimentConfig, t: usize) -> anyhow::Result<ConfigOutcome> {
    let g = grid(cfg)?;
    let d = cfg.d;
    let alpha = cfg.matrix.alpha;
    let fam = dyadic_family(&g, cfg.matrix.depth)?;
    let mut rng = cfg.rng(Suite::Matrix, t as u64);
    let w = random_matrix_field(g, d, &mut rng)?;
    let p = random_exponent(g, &mut rng, 1.5, 3.5);
    let q = derive_q(&p, alpha, g.dim(), 1)?;

    let sandwich = certify(cfg, &w, &p, &q, &fam, t as u64)?;
    let direct = matrix_apq_direct(&w, &p, &q, alpha, &fam, None)?.constant;
    let reduced = matrix_apq_reduced(&w, &p, &q, alpha, &fam, &options(cfg))?;

    let rel = cfg.tolerances.rel;
    let per_cube: Vec<(f64, usize, f64)> = fam
        .cubes
        .par_iter()
        .enumerate()
        .map(|(k, c)| {
            let cells: Vec<usize> = c.cell_box(&g).cells(&g).collect();
            let mut rng = cfg.rng(Suite::Matrix, ((t as u64) << 20) | (k as u64 + 1));
            let (mut worst, mut bad, mut best) = (0.0f64, 0, 0.0f64);
            for f in vector_probes(&w, &cells, cfg.probes, &mut rng) {
                let r = averaging_ratio(&w, &p, &q, alpha, c, &f)?.ratio;
                worst = worst.max(r / (4.0 * direct));
                best = best.max(r);
                if r > 4.0 * direct * (1.0 + rel) {
                    bad += 1;
                }
            }
            Ok((worst, bad, best))
        })
        .collect::<anyhow::Result<_>>()?;

    let f = VectorField::from_fn(g, d, |x| DVector::from_fn(d, |i, _| (1.0 + i as f64) * (3.0 * x[0] + i as f64).sin() + 0.5))?;
    let cg = christ_goldberg(&f, &w, alpha, &fam)?;
    let cg_ratio = luxemburg_norm(&cg, &q)?.norm / luxemburg_norm(&f.weighted_magnitude(&w)?, &p)?.norm;

    let e = {
        let v = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let r = v.norm();
        v / r
    };
    let proj = scalar_projections(&w, &e, &p, &q, alpha, &fam)?;
    Ok(ConfigOutcome {
        sandwich,
        direct,
        reduced: reduced.report.constant,
        commutation_gap: reduced.commutation_gap,
        max_sandwich: reduced.max_sandwich,
        factor4_worst: per_cube.iter().map(|v| v.0).fold(0.0, f64::max),
        factor4_violations: per_cube.iter().map(|v| v.1).sum(),
        averaging_lower: per_cube.iter().map(|v| v.2).fold(0.0, f64::max),
        cg_ratio,
        norm_constant: proj.norm.constant,
        projection_constant: proj.projection.constant,
        c_d: proj.c_d,
        triangle: proj.triangle_holds(cfg.tolerances.projection),
    })
}

fn random_fields(cfg: &ExperimentConfig) -> anyhow::Result<Vec<CheckRecord>> {
    let d = cfg.d as f64;
    let outcomes: Vec<ConfigOutcome> = (0..cfg.trials.matrix).into_par_iter().map(|t| run_config(cfg, t)).collect::<anyhow::Result<_>>()?;
    let opts = options(cfg);
    let upper = d.sqrt() * (1.0 + opts.tol) * (1.0 + opts.slack);
    let lower_tol = 1e-9;
    let band = cfg.tolerances.apq_band;
    let ptol = cfg.tolerances.projection;
    let mut recs = Vec::new();

    let failures: Vec<&String> = outcomes.iter().flat_map(|o| &o.sandwich.failures).collect();
    let min_lower = outcomes.iter().map(|o| o.sandwich.min_lower).fold(f64::INFINITY, f64::min);
    let max_upper = outcomes.iter().map(|o| o.sandwich.max_upper).fold(0.0, f64::max);
    let operators: usize = outcomes.iter().map(|o| o.sandwich.operators).sum();
    let mut rec = CheckRecord::new("matrix.certification", ANCHOR_SANDWICH, Some(7))
        .value("configs", outcomes.len() as f64)
        .value("operators", operators as f64)
        .value("failed_operators", failures.len() as f64);
    rec = if failures.is_empty() { rec.assert_count(0) } else { rec.fail(failures[0].clone()) };
    recs.push(rec);
    recs.push(
        CheckRecord::new("matrix.held-out.lower", ANCHOR_SANDWICH, Some(7))
            .value("min_ratio", min_lower)
            .value("holdout", opts.holdout as f64)
            .tolerance(lower_tol)
            .assert_le(1.0 - lower_tol, min_lower),
    );
    recs.push(
        CheckRecord::new("matrix.held-out.upper", ANCHOR_SANDWICH, Some(7))
            .value("max_ratio", max_upper)
            .value("allowed", upper)
            .tolerance(upper)
            .assert_le(max_upper, upper),
    );
    recs.push(
        CheckRecord::new("matrix.fresh-directions", ANCHOR_SANDWICH, None)
            .value("min_ratio", outcomes.iter().map(|o| o.sandwich.fresh_min).fold(f64::INFINITY, f64::min))
            .value("max_ratio", outcomes.iter().map(|o| o.sandwich.fresh_max).fold(0.0, f64::max))
            .detail("random directions outside the certificate, reported"),
    );

    let ratios: Vec<f64> = outcomes.iter().map(|o| o.direct / o.reduced).collect();
    let (rmin, rmax) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    let c = rmax.max(rmin.recip());
    recs.push(
        CheckRecord::new("matrix.two-path-band", ANCHOR_TWO_PATH, Some(7))
            .value("min_direct_over_reduced", rmin)
            .value("max_direct_over_reduced", rmax)
            .value("band_c", c)
            .tolerance(band)
            .assert_le(c, band),
    );
    let gap = outcomes.iter().map(|o| o.commutation_gap).fold(0.0, f64::max);
    recs.push(
        CheckRecord::new("matrix.commutation", ANCHOR_TWO_PATH, None)
            .value("max_gap", gap)
            .value("max_sandwich", outcomes.iter().map(|o| o.max_sandwich).fold(0.0, f64::max))
            .tolerance(1e-10)
            .assert_le(gap, 1e-10),
    );

    let violations: usize = outcomes.iter().map(|o| o.factor4_violations).sum();
    recs.push(
        CheckRecord::new("matrix.factor-4", ANCHOR_FACTOR4, Some(7))
            .value("max_ratio_over_bound", outcomes.iter().map(|o| o.factor4_worst).fold(0.0, f64::max))
            .value("violations", violations as f64)
            .tolerance(cfg.tolerances.rel)
            .assert_count(violations),
    );
    recs.push(
        CheckRecord::new("matrix.averaging-lower", ANCHOR_FACTOR4, None)
            .value(
                "max_constant_over_measured",
                outcomes.iter().map(|o| o.direct / o.averaging_lower).fold(0.0, f64::max),
            )
            .detail("lower-bound ratio, reported"),
    );

    let cg_max = outcomes.iter().map(|o| o.cg_ratio).fold(0.0, f64::max);
    let finite = outcomes.iter().all(|o| o.cg_ratio.is_finite() && o.direct.is_finite());
    let rec = CheckRecord::new("matrix.christ-goldberg", ANCHOR_CG, None).value("max_operator_ratio", cg_max);
    recs.push(if finite { rec.assert_count(0) } else { rec.fail("non-finite constant") });

    let norm_excess = outcomes.iter().map(|o| o.norm_constant - d * o.direct).fold(f64::NEG_INFINITY, f64::max);
    let proj_excess = outcomes.iter().map(|o| o.projection_constant - o.direct).fold(f64::NEG_INFINITY, f64::max);
    let triangle = outcomes.iter().filter(|o| !o.triangle).count();
    recs.push(
        CheckRecord::new("matrix.norm-reduction", ANCHOR_PROJECTION, Some(8))
            .value("max_norm_minus_d_matrix", norm_excess)
            .value("max_c_d", outcomes.iter().map(|o| o.c_d).fold(0.0, f64::max))
            .tolerance(ptol)
            .assert_le(norm_excess, ptol),
    );
    recs.push(
        CheckRecord::new("matrix.projection-reduction", ANCHOR_PROJECTION, Some(8))
            .value("max_projection_minus_matrix", proj_excess)
            .tolerance(ptol)
            .assert_le(proj_excess, ptol),
    );
    recs.push(
        CheckRecord::new("matrix.projection-triangle", ANCHOR_PROJECTION, Some(8))
            .value("violations", triangle as f64)
            .assert_count(triangle),
    );
    Ok(recs)
}

fn identity(cfg: &ExperimentConfig) -> anyhow::Result<Vec<CheckRecord>> {
    let g = grid(cfg)?;
    let alpha = cfg.matrix.alpha;
    let fam = dyadic_family(&g, cfg.matrix.depth)?;
    let w = MatrixWeightField::constant(g, DMatrix::identity(cfg.d, cfg.d))?;
    let p = ExponentField::constant(g, 2.0)?;
    let q = derive_q(&p, alpha, g.dim(), 1)?;
    let direct = matrix_apq_direct(&w, &p, &q, alpha, &fam, None)?.constant;
    let reduced = matrix_apq_reduced(&w, &p, &q, alpha, &fam, &options(cfg))?;
    let err = rel_err(direct, 1.0).max(rel_err(reduced.report.constant, 1.0)).max(rel_err(reduced.max_sandwich, 1.0));
    let tol = cfg.tolerances.projection;
    Ok(vec![CheckRecord::new("matrix.identity", ANCHOR_TWO_PATH, Some(7))
        .value("direct", direct)
        .value("reduced", reduced.report.constant)
        .value("sandwich", reduced.max_sandwich)
        .tolerance(tol)
        .assert_le(err, tol)])
}

fn scalar_collapse(cfg: &ExperimentConfig) -> anyhow::Result<Vec<CheckRecord>> {
    let g = grid(cfg)?;
    let alpha = cfg.matrix.alpha;
    let fam = dyadic_family(&g, cfg.matrix.depth)?;
    let tol = cfg.tolerances.matrix_two_path;
    let errs: Vec<(f64, f64)> = (0..cfg.trials.matrix_scalar)
        .into_par_iter()
        .map(|t| {
            let mut rng = cfg.rng(Suite::Matrix, (2 << 30) | t as u64);
            let ws: GridField = random_weight(g, &mut rng);
            let p = random_exponent(g, &mut rng, 1.5, 3.5);
            let q = derive_q(&p, alpha, g.dim(), 1)?;
            let w = MatrixWeightField::from_scalar(&ws)?;
            let direct = matrix_apq_direct(&w, &p, &q, alpha, &fam, None)?.constant;
            let reduced = matrix_apq_reduced(&w, &p, &q, alpha, &fam, &options(cfg))?.report.constant;
            let scalar = apq_constant(&ws, &p, &q, alpha, &fam)?.constant;
            Ok((rel_err(reduced, direct), rel_err(scalar, direct)))
        })
        .collect::<anyhow::Result<_>>()?;
    let two_path = errs.iter().map(|e| e.0).fold(0.0, f64::max);
    let scalar = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    Ok(vec![CheckRecord::new("matrix.scalar-two-path", ANCHOR_TWO_PATH, Some(7))
        .value("max_rel_err", two_path)
        .value("max_rel_err_scalar_constant", scalar)
        .value("fields", errs.len() as f64)
        .tolerance(tol)
        .assert_le(two_path.max(scalar), tol)])
}
