//! Weight-class constants over finite cube families.
//!
//! Weights live on the domain only, so every cube `B` is measured by the
//! cells it covers: `|B|` below means the covered volume. For cubes of the
//! unshifted family this is the cube volume.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VarlexError};
use crate::exponents::{cube_exponents, reciprocal_sum, ExponentField};
use crate::grid::{CellBox, CubeFamily, DomainGrid, DyadicCube, GridField};
use crate::scalar::Real;
use crate::varlebesgue::luxemburg_slice;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightConstantReport<T> {
    pub constant: T,
    pub argmax: Option<DyadicCube>,
    /// One entry per cube of the family that covers at least one cell, in
    /// family order.
    pub per_cube: Vec<(DyadicCube, T)>,
    pub n_cubes: usize,
}

/// Evaluates `value` on every cube that meets a cell and keeps the maximum.
pub fn sup_over_cubes<T: Real, F>(
    grid: &DomainGrid<T>,
    cubes: &CubeFamily,
    value: F,
) -> Result<WeightConstantReport<T>>
where
    F: Fn(&DyadicCube, &CellBox) -> Result<T> + Sync,
{
    if cubes.is_empty() {
        return Err(VarlexError::Empty("cube family"));
    }
    let per_cube: Vec<(DyadicCube, T)> = cubes
        .cubes
        .par_iter()
        .filter_map(|c| {
            let b = c.cell_box(grid);
            (!b.is_empty()).then(|| value(c, &b).map(|v| (*c, v)))
        })
        .collect::<Result<_>>()?;
    let mut constant = T::neg_infinity();
    let mut argmax = None;
    for (c, v) in &per_cube {
        if *v > constant || argmax.is_none() {
            constant = *v;
            argmax = Some(*c);
        }
    }
    Ok(WeightConstantReport {
        constant,
        argmax,
        n_cubes: per_cube.len(),
        per_cube,
    })
}

fn gather<T: Real>(f: &[T], grid: &DomainGrid<T>, b: &CellBox) -> Vec<T> {
    b.cells(grid).map(|i| f[i]).collect()
}

/// `‖g χ_B‖_{r(·)}` for a block of cells.
fn box_norm<T: Real>(g: &GridField<T>, r: &ExponentField<T>, b: &CellBox) -> Result<T> {
    let grid = g.grid();
    let vals = gather(g.values(), grid, b);
    let exps = gather(r.values(), grid, b);
    Ok(luxemburg_slice(&vals, &exps, grid.cell_volume())?.norm)
}

/// `(Σ_B g^r h^n)^{1/r}` for constant `r`.
fn box_norm_const<T: Real>(g: &GridField<T>, r: T, b: &CellBox) -> T {
    let grid = g.grid();
    let s: T = b.cells(grid).map(|i| g.values()[i].abs().powf(r)).sum();
    (s * grid.cell_volume()).powf(r.recip())
}

fn covered<T: Real>(grid: &DomainGrid<T>, b: &CellBox) -> T {
    T::from_usize_lossy(b.len()) * grid.cell_volume()
}

fn check_exponent<T: Real>(p: T) -> Result<()> {
    if p > T::one() && p.is_finite() {
        Ok(())
    } else {
        Err(VarlexError::ExponentClass {
            cell: 0,
            value: p.to_f64_lossy(),
            class: "P",
        })
    }
}

/// A multiple weight with its derived weights `σᵢ = ωᵢ^{−pᵢ'}` and `u = ω^q`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<T> {
    weights: Vec<GridField<T>>,
    product: GridField<T>,
    sigma: Vec<GridField<T>>,
    u: GridField<T>,
}

impl<T: Real> WeightVector<T> {
    pub fn new(
        weights: Vec<GridField<T>>,
        ps: &[ExponentField<T>],
        q: &ExponentField<T>,
    ) -> Result<Self> {
        if weights.is_empty() {
            return Err(VarlexError::Empty("weight vector"));
        }
        if weights.len() != ps.len() {
            return Err(VarlexError::ShapeMismatch {
                expected: ps.len(),
                got: weights.len(),
            });
        }
        for w in &weights {
            w.validate_weight()?;
        }
        let mut product = weights[0].clone();
        for w in &weights[1..] {
            product = product.mul(w)?;
        }
        let sigma = weights
            .iter()
            .zip(ps)
            .map(|(w, p)| w.zip_map(p.conjugate()?.field(), |a, e| a.powf(-e)))
            .collect::<Result<Vec<_>>>()?;
        let u = product.zip_map(q.field(), |a, e| a.powf(e))?;
        Ok(Self {
            weights,
            product,
            sigma,
            u,
        })
    }

    pub fn m(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[GridField<T>] {
        &self.weights
    }

    /// `ω = Π ωᵢ`
    pub fn product(&self) -> &GridField<T> {
        &self.product
    }

    pub fn sigma(&self) -> &[GridField<T>] {
        &self.sigma
    }

    pub fn u(&self) -> &GridField<T> {
        &self.u
    }

    /// Largest relative deviation between the stored `σᵢ`, `u` and a fresh
    /// recomputation from `(ωᵢ, pᵢ, q)`.
    pub fn consistency_error(&self, ps: &[ExponentField<T>], q: &ExponentField<T>) -> Result<T> {
        let fresh = Self::new(self.weights.clone(), ps, q)?;
        let mut err = T::zero();
        let pairs = self
            .sigma
            .iter()
            .zip(&fresh.sigma)
            .chain(std::iter::once((&self.u, &fresh.u)));
        for (a, b) in pairs {
            for (&x, &y) in a.values().iter().zip(b.values()) {
                err = err.max(crate::scalar::rel_diff(x, y));
            }
        }
        Ok(err)
    }
}

/// `sup_B |B|^{−1}‖ω^{−1}‖_{L^{p'}(B)}‖ω‖_{L^p(B)}` for constant `p`.
pub fn classical_ap<T: Real>(
    w: &GridField<T>,
    p: T,
    cubes: &CubeFamily,
) -> Result<WeightConstantReport<T>> {
    check_exponent(p)?;
    w.validate_weight()?;
    let pc = p / (p - T::one());
    let inv = w.map(|v| v.recip());
    let grid = w.grid();
    sup_over_cubes(grid, cubes, |_, b| {
        Ok(box_norm_const(w, p, b) * box_norm_const(&inv, pc, b) / covered(grid, b))
    })
}

/// `sup_B ⟨ω^r⟩_B^{1/r} / ⟨ω⟩_B`.
pub fn reverse_holder<T: Real>(
    w: &GridField<T>,
    r: T,
    cubes: &CubeFamily,
) -> Result<WeightConstantReport<T>> {
    check_exponent(r)?;
    w.validate_weight()?;
    let grid = w.grid();
    sup_over_cubes(grid, cubes, |_, b| {
        let k = T::from_usize_lossy(b.len());
        let mut s1 = T::zero();
        let mut sr = T::zero();
        for i in b.cells(grid) {
            let v = w.values()[i];
            s1 += v;
            sr += v.powf(r);
        }
        Ok((sr / k).powf(r.recip()) / (s1 / k))
    })
}

/// `sup_B |B|^{−1}‖ωχ_B‖_{r(·)}‖ω^{−1}χ_B‖_{r'(·)}`.
pub fn variable_ap<T: Real>(
    w: &GridField<T>,
    r: &ExponentField<T>,
    cubes: &CubeFamily,
) -> Result<WeightConstantReport<T>> {
    multi_apq_constant(
        std::slice::from_ref(w),
        std::slice::from_ref(r),
        r,
        T::zero(),
        cubes,
    )
}

/// Scalar `A_{p(·),q(·)}` constant with `1/q = 1/p − α/n`.
pub fn apq_constant<T: Real>(
    w: &GridField<T>,
    p: &ExponentField<T>,
    q: &ExponentField<T>,
    alpha: T,
    cubes: &CubeFamily,
) -> Result<WeightConstantReport<T>> {
    multi_apq_constant(
        std::slice::from_ref(w),
        std::slice::from_ref(p),
        q,
        alpha,
        cubes,
    )
}

pub(crate) fn check_consistency<T: Real>(
    ps: &[ExponentField<T>],
    q: &ExponentField<T>,
    alpha: T,
) -> Result<()> {
    let p = reciprocal_sum(ps)?;
    let ratio = alpha / T::from_usize_lossy(q.grid().dim());
    let tol = T::lit(1e-10).max(T::epsilon() * T::lit(64.0));
    for (cell, (&pv, &qv)) in p.values().iter().zip(q.values()).enumerate() {
        let expected = pv.recip() - ratio;
        if (qv.recip() - expected).abs() > tol {
            return Err(VarlexError::InconsistentExponents {
                cell,
                got: qv.recip().to_f64_lossy(),
                expected: expected.to_f64_lossy(),
            });
        }
    }
    Ok(())
}

/// `sup_B |B|^{α/n − m}‖ωχ_B‖_{q(·)} Π‖ωᵢ^{−1}χ_B‖_{pᵢ'(·)}`.
pub fn multi_apq_constant<T: Real>(
    weights: &[GridField<T>],
    ps: &[ExponentField<T>],
    q: &ExponentField<T>,
    alpha: T,
    cubes: &CubeFamily,
) -> Result<WeightConstantReport<T>> {
    if weights.is_empty() || weights.len() != ps.len() {
        return Err(VarlexError::ShapeMismatch {
            expected: ps.len(),
            got: weights.len(),
        });
    }
    check_consistency(ps, q, alpha)?;
    let grid = *q.grid();
    let m = weights.len();
    let mut product = weights[0].clone();
    for w in weights {
        w.validate_weight()?;
        w.check_same_grid(q.field())?;
    }
    for w in &weights[1..] {
        product = product.mul(w)?;
    }
    let inverses: Vec<_> = weights.iter().map(|w| w.map(|v| v.recip())).collect();
    let conj = ps
        .iter()
        .map(|p| p.conjugate())
        .collect::<Result<Vec<_>>>()?;
    let power = alpha / T::from_usize_lossy(grid.dim()) - T::from_usize_lossy(m);
    sup_over_cubes(&grid, cubes, |_, b| {
        let mut v = covered(&grid, b).powf(power) * box_norm(&product, q, b)?;
        for (inv, pc) in inverses.iter().zip(&conj) {
            v *= box_norm(inv, pc, b)?;
        }
        Ok(v)
    })
}

/// Constant-exponent `A_{p⃗,q}` constant by closed-form norms.
pub fn multi_apq_constant_const<T: Real>(
    weights: &[GridField<T>],
    ps: &[T],
    alpha: T,
    cubes: &CubeFamily,
) -> Result<WeightConstantReport<T>> {
    let first = weights.first().ok_or(VarlexError::Empty("weight vector"))?;
    if weights.len() != ps.len() {
        return Err(VarlexError::ShapeMismatch {
            expected: ps.len(),
            got: weights.len(),
        });
    }
    let grid = *first.grid();
    let ratio = alpha / T::from_usize_lossy(grid.dim());
    let inv_q = ps.iter().map(|p| p.recip()).sum::<T>() - ratio;
    if !(inv_q > T::zero()) {
        return Err(VarlexError::NonPositiveReciprocal {
            cell: 0,
            inv_q: inv_q.to_f64_lossy(),
        });
    }
    for &p in ps {
        check_exponent(p)?;
    }
    let mut product = first.clone();
    for w in &weights[1..] {
        product = product.mul(w)?;
    }
    for w in weights {
        w.validate_weight()?;
    }
    let inverses: Vec<_> = weights.iter().map(|w| w.map(|v| v.recip())).collect();
    let q = inv_q.recip();
    let power = ratio - T::from_usize_lossy(ps.len());
    sup_over_cubes(&grid, cubes, |_, b| {
        let mut v = covered(&grid, b).powf(power) * box_norm_const(&product, q, b);
        for (inv, &p) in inverses.iter().zip(ps) {
            v *= box_norm_const(inv, p / (p - T::one()), b);
        }
        Ok(v)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vweight4Report<T> {
    /// `[ω⃗]_{A_{p⃗(·),q(·)}}`
    pub multi: T,
    /// `[ωⱼ^{−1/m}]^m_{A_{mpⱼ'(·)}}` per factor.
    pub factor_constants: Vec<T>,
    /// `[ω^{1/m}]^m_{A_{mq(·)}}`
    pub product_constant: T,
    /// Largest of the above divided by `multi`.
    pub measured_c: T,
}

impl<T: Real> Vweight4Report<T> {
    pub fn holds(&self, c: T) -> bool {
        self.measured_c <= c
    }
}

/// Measures the single-weight constants implied by membership of `ω⃗` in the
/// multiple class, relative to the multiple constant.
pub fn vweight4_check<T: Real>(
    weights: &[GridField<T>],
    ps: &[ExponentField<T>],
    q: &ExponentField<T>,
    alpha: T,
    cubes: &CubeFamily,
) -> Result<Vweight4Report<T>> {
    let multi = multi_apq_constant(weights, ps, q, alpha, cubes)?.constant;
    let m = weights.len();
    let mt = T::from_usize_lossy(m);
    let inv_m = mt.recip();
    let mut factor_constants = Vec::with_capacity(m);
    for (w, p) in weights.iter().zip(ps) {
        let r = p.conjugate()?.scaled(mt)?;
        let c = variable_ap(&w.map(|v| v.powf(-inv_m)), &r, cubes)?.constant;
        factor_constants.push(c.powi(m as i32));
    }
    let mut product = weights[0].clone();
    for w in &weights[1..] {
        product = product.mul(w)?;
    }
    let r = q.scaled(mt)?;
    let product_constant = variable_ap(&product.map(|v| v.powf(inv_m)), &r, cubes)?
        .constant
        .powi(m as i32);
    let worst = factor_constants
        .iter()
        .fold(product_constant, |a, &b| a.max(b));
    Ok(Vweight4Report {
        multi,
        factor_constants,
        product_constant,
        measured_c: worst / multi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorBoundReport<T> {
    pub multi: T,
    /// `Π [ωᵢ]_{A_{pᵢ(·),qᵢ(·)}}` with `1/qᵢ = 1/pᵢ − α/(mn)`
    pub factor_product: T,
    /// `multi / factor_product`
    pub ratio: T,
}

/// Compares the multiple constant with the product of single-weight
/// `A_{pᵢ(·),qᵢ(·)}` constants, each at order `α/m`.
pub fn factor_bound_check<T: Real>(
    weights: &[GridField<T>],
    ps: &[ExponentField<T>],
    q: &ExponentField<T>,
    alpha: T,
    cubes: &CubeFamily,
) -> Result<FactorBoundReport<T>> {
    let multi = multi_apq_constant(weights, ps, q, alpha, cubes)?.constant;
    let m = weights.len();
    let dim = q.grid().dim();
    let alpha_i = alpha / T::from_usize_lossy(m);
    let mut factor_product = T::one();
    for (w, p) in weights.iter().zip(ps) {
        let qi = crate::exponents::derive_q(p, alpha_i, dim, 1)?;
        factor_product *= apq_constant(w, p, &qi, alpha_i, cubes)?.constant;
    }
    Ok(FactorBoundReport {
        multi,
        factor_product,
        ratio: multi / factor_product,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionReport<T> {
    /// Smallest `ω(E)/ω(Q)` over the family with `|E| ≥ frac·|Q|`.
    pub beta: T,
    pub argmin: Option<DyadicCube>,
}

/// Empirical absorption constant. For each cube the worst admissible `E` is
/// the union of the `⌈frac·#Q⌉` lightest cells, so the minimum is exact over
/// cell unions rather than sampled.
pub fn ainfty_absorption<T: Real>(
    w: &GridField<T>,
    cubes: &CubeFamily,
    frac: T,
) -> Result<AbsorptionReport<T>> {
    if !(frac > T::zero() && frac <= T::one()) {
        return Err(VarlexError::Invalid(format!(
            "absorption fraction {frac} outside (0, 1]"
        )));
    }
    w.validate_weight()?;
    let grid = w.grid();
    let rep = sup_over_cubes(grid, cubes, |_, b| {
        let mut vals = gather(w.values(), grid, b);
        vals.sort_by(|a, c| a.partial_cmp(c).expect("finite weights"));
        let k = (frac * T::from_usize_lossy(vals.len()) - T::lit(1e-9)).ceil();
        let k = k.to_usize().unwrap_or(vals.len()).clamp(1, vals.len());
        let total: T = vals.iter().copied().sum();
        let light: T = vals[..k].iter().copied().sum();
        // maximize the negation to reuse the sup machinery
        Ok(-(light / total))
    })?;
    Ok(AbsorptionReport {
        beta: -rep.constant,
        argmin: rep.argmax,
    })
}

/// `sup_Q sup_{x∈Q} ‖v^{−1}χ_Q‖_{h'(·)}^{δ(Q) − q(x)}`, which stays bounded
/// for log-Hölder exponents and `v ∈ A_{h(·)}`.
pub fn q_relation_diagnostic<T: Real>(
    v: &GridField<T>,
    h: &ExponentField<T>,
    ps: &[ExponentField<T>],
    q: &ExponentField<T>,
    alpha: T,
    cubes: &CubeFamily,
) -> Result<WeightConstantReport<T>> {
    v.validate_weight()?;
    let hc = h.conjugate()?;
    let inv = v.map(|x| x.recip());
    let grid = *v.grid();
    sup_over_cubes(&grid, cubes, |cube, b| {
        let delta = cube_exponents(ps, alpha, cube)?.delta;
        let nv = box_norm(&inv, &hc, b)?;
        let (q_lo, q_hi) = q.range_on(b).expect("nonempty box");
        let worst = if nv <= T::one() { q_hi } else { q_lo };
        Ok(nv.powf(delta - worst))
    })
}
