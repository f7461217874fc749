//! Lebesgue-space foundations: constant-exponent collapse, modular bounds,
//! Hölder, product norms, duality and the single-weight implications.

use rayon::prelude::*;
use varlex_core::{
    derive_q, dual_lower_bound, dyadic_family, holder_check, luxemburg_norm, modular_norm_bounds, product_norm_check,
    reciprocal_sum, vweight4_check, DomainGrid, ExponentField,
};

use super::{random_exponent, random_signed, random_weight, rel_err};
use crate::config::{ExperimentConfig, Suite};
use crate::report::{timed, CheckRecord};

pub fn verify_foundations(cfg: &ExperimentConfig) -> Vec<CheckRecord> {
    let mut out = Vec::new();
    out.extend(timed("lebesgue.constant-collapse", ANCHOR_COLLAPSE, Some(1), || constant_collapse(cfg)));
    out.extend(timed("lebesgue.modular-bounds", ANCHOR_MODULAR, Some(2), || modular_bounds(cfg)));
    out.extend(timed("lebesgue.holder-4", ANCHOR_HOLDER, Some(2), || holder(cfg)));
    out.extend(timed("lebesgue.product-norm", ANCHOR_PRODUCT, None, || product_norm(cfg)));
    out.extend(timed("lebesgue.dual", ANCHOR_DUAL, None, || duality(cfg)));
    out.extend(timed("weights.single-implications", ANCHOR_VWEIGHT, None, || single_implications(cfg)));
    out
}

const ANCHOR_COLLAPSE: &str = "constant exponent: Luxemburg norm equals the L^p norm";
const ANCHOR_MODULAR: &str = "modular-norm bounds rho^(1/p+) <= ||f|| <= rho^(1/p-) above norm one, swapped below";
const ANCHOR_HOLDER: &str = "variable-exponent Holder inequality with constant 4";
const ANCHOR_PRODUCT: &str = "generalized Holder: ||f1...fm||_p <= C prod ||fi||_pi";
const ANCHOR_DUAL: &str = "duality: norm is a supremum of pairings with the unit ball of L^p'";
const ANCHOR_VWEIGHT: &str = "multiple-weight membership implies the single-weight classes of the factors and the product";

fn grid(cfg: &ExperimentConfig) -> anyhow::Result<DomainGrid> {
    cfg.grid.build()
}

fn constant_collapse(cfg: &ExperimentConfig) -> anyhow::Result<Vec<CheckRecord>> {
    let g = grid(cfg)?;
    let tol = cfg.tolerances.collapse;
    let mut recs = Vec::new();
    for (slot, p0) in [1.5, 2.0, 3.0].into_iter().enumerate() {
        let p = ExponentField::constant(g, p0)?;
        let errs: Vec<f64> = (0..cfg.trials.collapse)
            .into_par_iter()
            .map(|t| {
                let mut rng = cfg.rng(Suite::Foundations, (slot * 100_000 + t) as u64);
                let f = random_signed(g, &mut rng);
                // closed form with the maximum factored out
                let top = f.max_abs();
                let s: f64 = f.values().iter().map(|v| (v.abs() / top).powf(p0)).sum();
                let want = top * (s * g.cell_volume()).powf(p0.recip());
                Ok(rel_err(luxemburg_norm(&f, &p)?.norm, want))
            })
            .collect::<anyhow::Result<_>>()?;
        let worst = errs.iter().copied().fold(0.0, f64::max);
        recs.push(
            CheckRecord::new(&format!("lebesgue.constant-collapse.p{p0}"), ANCHOR_COLLAPSE, Some(1))
                .value("max_rel_err", worst)
                .value("trials", errs.len() as f64)
                .tolerance(tol)
                .assert_le(worst, tol),
        );
    }
    Ok(recs)
}

fn modular_bounds(cfg: &ExperimentConfig) -> anyhow::Result<Vec<CheckRecord>> {
    let g = grid(cfg)?;
    let tol = cfg.tolerances.modular;
    let results: Vec<(bool, f64)> = (0..cfg.trials.modular)
        .into_par_iter()
        .map(|t| {
            let mut rng = cfg.rng(Suite::Foundations, 1_000_000 + t as u64);
            let p = random_exponent(g, &mut rng, 1.05, 6.0);
            let f = random_signed(g, &mut rng);
            let r = modular_norm_bounds(&f, &p)?;
            Ok((r.holds(tol), r.norm))
        })
        .collect::<anyhow::Result<_>>()?;
    let violations = results.iter().filter(|r| !r.0).count();
    let above = results.iter().filter(|r| r.1 > 1.0).count();
    Ok(vec![CheckRecord::new("lebesgue.modular-bounds", ANCHOR_MODULAR, Some(2))
        .value("trials", results.len() as f64)
        .value("trials_norm_above_one", above as f64)
        .value("violations", violations as f64)
        .tolerance(tol)
        .assert_count(violations)])
}

fn holder(cfg: &ExperimentConfig) -> anyhow::Result<Vec<CheckRecord>> {
    let g = grid(cfg)?;
    let tol = cfg.tolerances.holder;
    let results: Vec<(bool, f64)> = (0..cfg.trials.holder)
        .into_par_iter()
        .map(|t| {
            let mut rng = cfg.rng(Suite::Foundations, 2_000_000 + t as u64);
            let p = random_exponent(g, &mut rng, 1.05, 6.0);
            let f = random_signed(g, &mut rng);
            let h = random_signed(g, &mut rng);
            let r = holder_check(&f, &h, &p)?;
            Ok((r.holds(tol), 4.0 * r.lhs / r.rhs))
        })
        .collect::<anyhow::Result<_>>()?;
    let violations = results.iter().filter(|r| !r.0).count();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(vec![CheckRecord::new("lebesgue.holder-4", ANCHOR_HOLDER, Some(2))
        .value("trials", results.len() as f64)
        .value("max_pairing_over_norms", worst)
        .value("violations", violations as f64)
        .tolerance(tol)
        .assert_count(violations)])
}

fn product_norm(cfg: &ExperimentConfig) -> anyhow::Result<Vec<CheckRecord>> {
    let g = grid(cfg)?;
    let consts: Vec<f64> = (0..cfg.trials.product)
        .into_par_iter()
        .map(|t| {
            let mut rng = cfg.rng(Suite::Foundations, 3_000_000 + t as u64);
            let ps: Vec<ExponentField> = (0..cfg.m.max(2)).map(|_| random_exponent(g, &mut rng, 1.5, 8.0)).collect();
            let fs: Vec<_> = ps.iter().map(|_| random_signed(g, &mut rng)).collect();
            Ok(product_norm_check(&fs, &ps)?.constant)
        })
        .collect::<anyhow::Result<_>>()?;
    let worst = consts.iter().copied().fold(0.0, f64::max);
    // p1 = p2 = 2: Cauchy-Schwarz, constant at most one
    let two = ExponentField::constant(g, 2.0)?;
    let mut cs_worst: f64 = 0.0;
    for t in 0..cfg.trials.product.min(20) {
        let mut rng = cfg.rng(Suite::Foundations, 3_500_000 + t as u64);
        let fs = [random_signed(g, &mut rng), random_signed(g, &mut rng)];
        cs_worst = cs_worst.max(product_norm_check(&fs, &[two.clone(), two.clone()])?.constant);
    }
    let tol = cfg.tolerances.rel;
    Ok(vec![
        CheckRecord::new("lebesgue.product-norm.variable", ANCHOR_PRODUCT, None)
            .value("max_constant", worst)
            .value("trials", consts.len() as f64)
            .detail("measured constant, reported"),
        CheckRecord::new("lebesgue.product-norm.cauchy-schwarz", ANCHOR_PRODUCT, None)
            .value("max_constant", cs_worst)
            .tolerance(tol)
            .assert_le(cs_worst, 1.0 + tol),
    ])
}

fn duality(cfg: &ExperimentConfig) -> anyhow::Result<Vec<CheckRecord>> {
    let g = grid(cfg)?;
    let results: Vec<(f64, f64)> = (0..cfg.trials.dual)
        .into_par_iter()
        .map(|t| {
            let mut rng = cfg.rng(Suite::Foundations, 4_000_000 + t as u64);
            let p = random_exponent(g, &mut rng, 1.1, 6.0);
            let f = random_signed(g, &mut rng);
            let r = dual_lower_bound(&f, &p, cfg.probes, &mut rng)?;
            Ok((rel_err(r.extremal, r.norm), r.ratio))
        })
        .collect::<anyhow::Result<_>>()?;
    let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let max_ratio = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let tol = 1e-8;
    Ok(vec![
        CheckRecord::new("lebesgue.dual.extremal", ANCHOR_DUAL, None)
            .value("max_rel_err", worst)
            .tolerance(tol)
            .assert_le(worst, tol),
        CheckRecord::new("lebesgue.dual.sampled", ANCHOR_DUAL, None)
            .value("max_norm_over_best_pairing", max_ratio)
            .detail("sampled pairings never exceed the norm; reported"),
    ])
}

fn single_implications(cfg: &ExperimentConfig) -> anyhow::Result<Vec<CheckRecord>> {
    let g = grid(cfg)?;
    let fam = dyadic_family(&g, cfg.depth)?;
    let m = cfg.m;
    let alpha = cfg.alpha;
    let n = g.dim() as f64;
    // keep 1/q = Σ1/pᵢ − α/n positive
    let p_hi = (m as f64 / (alpha / n + 0.1)).min(6.0);
    let cs: Vec<f64> = (0..cfg.trials.vweight)
        .into_par_iter()
        .map(|t| {
            let mut rng = cfg.rng(Suite::Foundations, 5_000_000 + t as u64);
            let ps: Vec<ExponentField> = (0..m).map(|_| random_exponent(g, &mut rng, 1.3, p_hi)).collect();
            let ws: Vec<_> = (0..m).map(|_| random_weight(g, &mut rng)).collect();
            let q = derive_q(&reciprocal_sum(&ps)?, alpha, g.dim(), m)?;
            Ok(vweight4_check(&ws, &ps, &q, alpha, &fam)?.measured_c)
        })
        .collect::<anyhow::Result<_>>()?;
    let worst = cs.iter().copied().fold(0.0, f64::max);
    let bound = cfg.tolerances.vweight_c;
    Ok(vec![CheckRecord::new("weights.single-implications", ANCHOR_VWEIGHT, None)
        .value("max_measured_c", worst)
        .value("trials", cs.len() as f64)
        .tolerance(bound)
        .assert_le(worst, bound)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn random_exponents_respect_range() {
        let g = DomainGrid::new(2, 1.0, 16).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = random_exponent(g, &mut rng, 1.2, 3.0);
            assert!(p.p_minus() >= 1.2 - 1e-12 && p.p_plus() <= 3.0 + 1e-12);
        }
    }
}
