//! Exponent fields `p(·)`: classes, conjugates, the shifted exponent `q(·)`,
//! log-Hölder diagnostics and the cube-local exponents `η(Q)`, `δ(Q)`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VarlexError};
use crate::grid::{CellBox, DomainGrid, DyadicCube, GridField, GridFieldJson};
use crate::scalar::Real;

/// Admissible exponent range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExponentClass {
    /// `1 < p₋ ≤ p₊ < ∞`
    P,
    /// `1 ≤ p₋ ≤ p₊ < ∞`
    P1,
    /// `0 < p₋ ≤ p₊ < ∞`
    P0,
}

impl ExponentClass {
    fn name(self) -> &'static str {
        match self {
            ExponentClass::P => "P",
            ExponentClass::P1 => "P1",
            ExponentClass::P0 => "P0",
        }
    }

    fn admits<T: Real>(self, v: T) -> bool {
        v.is_finite()
            && match self {
                ExponentClass::P => v > T::one(),
                ExponentClass::P1 => v >= T::one(),
                ExponentClass::P0 => v > T::zero(),
            }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExponentField<T> {
    field: GridField<T>,
    class: ExponentClass,
    p_minus: T,
    p_plus: T,
    p_infinity: Option<T>,
}

impl<T: Real> ExponentField<T> {
    pub fn new(field: GridField<T>, class: ExponentClass) -> Result<Self> {
        for (cell, &v) in field.values().iter().enumerate() {
            if !class.admits(v) {
                return Err(VarlexError::ExponentClass {
                    cell,
                    value: v.to_f64_lossy(),
                    class: class.name(),
                });
            }
        }
        let (p_minus, p_plus) = min_max(field.values().iter().copied());
        Ok(Self {
            field,
            class,
            p_minus,
            p_plus,
            p_infinity: None,
        })
    }

    /// Tags the field with the strictest class its values satisfy.
    pub fn infer(field: GridField<T>) -> Result<Self> {
        let (lo, _) = min_max(field.values().iter().copied());
        let class = if lo > T::one() {
            ExponentClass::P
        } else if lo >= T::one() {
            ExponentClass::P1
        } else {
            ExponentClass::P0
        };
        Self::new(field, class)
    }

    pub fn constant(grid: DomainGrid<T>, p: T) -> Result<Self> {
        Self::infer(GridField::constant(grid, p))
    }

    pub fn from_fn(grid: DomainGrid<T>, f: impl Fn([T; 2]) -> T) -> Result<Self> {
        Self::infer(GridField::from_fn(grid, f))
    }

    pub fn from_unit_fn(grid: DomainGrid<T>, f: impl Fn([T; 2]) -> T) -> Result<Self> {
        Self::infer(GridField::from_unit_fn(grid, f))
    }

    pub fn with_p_infinity(mut self, p_inf: T) -> Self {
        self.p_infinity = Some(p_inf);
        self
    }

    pub fn field(&self) -> &GridField<T> {
        &self.field
    }

    pub fn grid(&self) -> &DomainGrid<T> {
        self.field.grid()
    }

    pub fn values(&self) -> &[T] {
        self.field.values()
    }

    pub fn class(&self) -> ExponentClass {
        self.class
    }

    pub fn p_minus(&self) -> T {
        self.p_minus
    }

    pub fn p_plus(&self) -> T {
        self.p_plus
    }

    pub fn p_infinity(&self) -> Option<T> {
        self.p_infinity
    }

    pub fn is_constant(&self) -> bool {
        self.p_minus == self.p_plus
    }

    /// Essential infimum and supremum over the cells of a box.
    pub fn range_on(&self, b: &CellBox) -> Option<(T, T)> {
        if b.is_empty() {
            return None;
        }
        Some(min_max(b.cells(self.grid()).map(|i| self.values()[i])))
    }

    /// Harmonic mean over the cells of a box: `1/p_Q = ⟨1/p⟩_Q`.
    pub fn harmonic_mean_on(&self, b: &CellBox) -> Option<T> {
        if b.is_empty() {
            return None;
        }
        let inv: T = b.cells(self.grid()).map(|i| self.values()[i].recip()).sum();
        Some(T::from_usize_lossy(b.len()) / inv)
    }

    /// `p'(·) = p(·)/(p(·) − 1)`.
    pub fn conjugate(&self) -> Result<Self> {
        if let Some(cell) = self.values().iter().position(|&v| !(v > T::one())) {
            return Err(VarlexError::ConjugateUnbounded {
                cell,
                value: self.values()[cell].to_f64_lossy(),
            });
        }
        let f = self.field.map(|p| p / (p - T::one()));
        Self::new(f, ExponentClass::P)
    }

    /// Pointwise `c · p(·)`.
    pub fn scaled(&self, c: T) -> Result<Self> {
        Self::infer(self.field.map(|p| p * c))
    }

    pub fn to_json(&self) -> ExponentFieldJson {
        ExponentFieldJson {
            field: self.field.to_json(),
            class: self.class,
        }
    }

    pub fn from_json(json: &ExponentFieldJson) -> Result<Self> {
        Self::new(GridField::from_json(&json.field)?, json.class)
    }
}

/// [`GridFieldJson`] plus the exponent class tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFieldJson {
    #[serde(flatten)]
    pub field: GridFieldJson,
    pub class: ExponentClass,
}

fn min_max<T: Real>(it: impl Iterator<Item = T>) -> (T, T) {
    it.fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

pub fn conjugate<T: Real>(p: &ExponentField<T>) -> Result<ExponentField<T>> {
    p.conjugate()
}

/// `p(·)` with `1/p = Σ 1/pᵢ`.
pub fn reciprocal_sum<T: Real>(ps: &[ExponentField<T>]) -> Result<ExponentField<T>> {
    let first = ps.first().ok_or(VarlexError::Empty("exponent list"))?;
    let mut inv = first.field.map(|p| p.recip());
    for p in &ps[1..] {
        inv = inv.zip_map(&p.field, |a, b| a + b.recip())?;
    }
    ExponentField::infer(inv.map(|s| s.recip()))
}

/// `q(·)` with `1/q = 1/p − α/n`, for an `m`-linear setting (`α/n ∈ [0, m)`).
pub fn derive_q<T: Real>(
    p: &ExponentField<T>,
    alpha: T,
    dim: usize,
    m: usize,
) -> Result<ExponentField<T>> {
    let ratio = alpha / T::from_usize_lossy(dim);
    if !(ratio >= T::zero() && ratio < T::from_usize_lossy(m)) {
        return Err(VarlexError::BadOrder {
            alpha: alpha.to_f64_lossy(),
            limit: (dim * m) as f64,
        });
    }
    let mut out = Vec::with_capacity(p.values().len());
    for (cell, &pv) in p.values().iter().enumerate() {
        let inv_q = pv.recip() - ratio;
        if !(inv_q > T::zero()) {
            return Err(VarlexError::NonPositiveReciprocal {
                cell,
                inv_q: inv_q.to_f64_lossy(),
            });
        }
        out.push(if ratio == T::zero() {
            pv
        } else {
            inv_q.recip()
        });
    }
    let mut q = ExponentField::infer(GridField::new(*p.grid(), out)?)?;
    if let Some(pi) = p.p_infinity {
        q.p_infinity = Some((pi.recip() - ratio).recip());
    }
    Ok(q)
}

/// Empirical log-Hölder constants of an exponent field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogHolderReport {
    /// `max |p(x) − p(y)|·(−log|x−y|)` over cell pairs with `h ≤ |x−y| < 1/2`.
    pub local: f64,
    /// `max |p(x) − p_∞|·log(e + |x|)`.
    pub asymptotic: f64,
    pub p_infinity: f64,
}

/// `p_∞` defaults to the value at the cell farthest from the origin (first in
/// row-major order on ties) unless the field carries one.
pub fn log_holder<T: Real>(p: &ExponentField<T>) -> LogHolderReport {
    let grid = p.grid();
    let v = p.values();
    let n = v.len();
    let p_inf = p.p_infinity.unwrap_or_else(|| {
        let far = (0..n).fold(0usize, |best, i| {
            if grid.norm(i) > grid.norm(best) {
                i
            } else {
                best
            }
        });
        v[far]
    });
    let half = T::lit(0.5);
    let h = grid.cell_width();
    let tol = h * T::lit(1e-9);
    let mut local = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = grid.distance(i, j);
            if d + tol >= h && d < half {
                local = local.max((v[i] - v[j]).abs() * (-d.ln()));
            }
        }
    }
    let e = T::lit(std::f64::consts::E);
    let asymptotic = (0..n).fold(T::zero(), |acc, i| {
        acc.max((v[i] - p_inf).abs() * (e + grid.norm(i)).ln())
    });
    LogHolderReport {
        local: local.to_f64_lossy(),
        asymptotic: asymptotic.to_f64_lossy(),
        p_infinity: p_inf.to_f64_lossy(),
    }
}

/// Cube-local exponent data for `m` factor exponents.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeExponents<T> {
    pub p_minus: Vec<T>,
    pub p_plus: Vec<T>,
    /// Harmonic means `p_Q` per factor.
    pub harmonic_means: Vec<T>,
    /// `1/η(Q) = Σ 1/(pᵢ)₋(Q)`
    pub eta: T,
    /// `1/δ(Q) = 1/η(Q) − α/n`
    pub delta: T,
}

pub fn cube_exponents<T: Real>(
    ps: &[ExponentField<T>],
    alpha: T,
    cube: &DyadicCube,
) -> Result<CubeExponents<T>> {
    let first = ps.first().ok_or(VarlexError::Empty("exponent list"))?;
    let grid = first.grid();
    let b = cube.cell_box(grid);
    if b.is_empty() {
        return Err(VarlexError::Empty("cube has no cells"));
    }
    let mut p_minus = Vec::with_capacity(ps.len());
    let mut p_plus = Vec::with_capacity(ps.len());
    let mut harmonic_means = Vec::with_capacity(ps.len());
    for p in ps {
        let (lo, hi) = p.range_on(&b).expect("nonempty box");
        p_minus.push(lo);
        p_plus.push(hi);
        harmonic_means.push(p.harmonic_mean_on(&b).expect("nonempty box"));
    }
    let inv_eta: T = p_minus.iter().map(|v| v.recip()).sum();
    let ratio = alpha / T::from_usize_lossy(grid.dim());
    let inv_delta = inv_eta - ratio;
    if !(inv_delta > T::zero()) {
        return Err(VarlexError::DeltaUndefined {
            inv_eta: inv_eta.to_f64_lossy(),
            alpha_over_n: ratio.to_f64_lossy(),
        });
    }
    Ok(CubeExponents {
        p_minus,
        p_plus,
        harmonic_means,
        eta: inv_eta.recip(),
        delta: inv_delta.recip(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{dyadic_family, Shift};
    use std::f64::consts::PI;

    fn grid(n: usize) -> DomainGrid<f64> {
        DomainGrid::new(1, 0.5, n).unwrap()
    }

    #[test]
    fn conjugate_examples() {
        let g = grid(16);
        let two = ExponentField::constant(g, 2.0).unwrap();
        assert!(two.conjugate().unwrap().values().iter().all(|&v| v == 2.0));
        let four = ExponentField::constant(g, 4.0).unwrap();
        assert!(four
            .conjugate()
            .unwrap()
            .values()
            .iter()
            .all(|&v| (v - 4.0 / 3.0).abs() < 1e-15));
        let var = ExponentField::from_unit_fn(g, |u| 2.0 + 0.5 * (2.0 * PI * u[0]).sin()).unwrap();
        let c = var.conjugate().unwrap();
        for (i, &v) in c.values().iter().enumerate() {
            let u = g.unit_center(i)[0];
            let p = 2.0 + 0.5 * (2.0 * PI * u).sin();
            assert!((v - p / (p - 1.0)).abs() < 1e-14);
        }
        let one = ExponentField::new(GridField::constant(g, 1.0), ExponentClass::P1).unwrap();
        assert!(matches!(
            one.conjugate(),
            Err(VarlexError::ConjugateUnbounded { cell: 0, .. })
        ));
    }

    #[test]
    fn class_validation() {
        let g = grid(4);
        assert!(ExponentField::new(GridField::constant(g, 1.0), ExponentClass::P).is_err());
        assert!(ExponentField::new(GridField::constant(g, 0.5), ExponentClass::P1).is_err());
        assert!(ExponentField::new(GridField::constant(g, 0.5), ExponentClass::P0).is_ok());
        assert_eq!(
            ExponentField::constant(g, 0.5).unwrap().class(),
            ExponentClass::P0
        );
    }

    #[test]
    fn derive_q_examples() {
        let g = grid(8);
        let p = ExponentField::constant(g, 2.0).unwrap();
        // alpha / n = 1/4
        let q = derive_q(&p, 0.25, 1, 1).unwrap();
        assert!(q.values().iter().all(|&v| (v - 4.0).abs() < 1e-14));
        let p32 = ExponentField::constant(g, 1.5).unwrap();
        assert!(matches!(
            derive_q(&p32, 2.0 / 3.0, 1, 1),
            Err(VarlexError::NonPositiveReciprocal { cell: 0, .. })
        ));
        let var = ExponentField::from_unit_fn(g, |u| 1.5 + u[0]).unwrap();
        assert_eq!(derive_q(&var, 0.0, 1, 1).unwrap().values(), var.values());
        assert!(derive_q(&var, 1.0, 1, 1).is_err());
    }

    #[test]
    fn log_holder_examples() {
        let g = grid(64);
        let c = ExponentField::constant(g, 2.5).unwrap();
        let r = log_holder(&c);
        assert_eq!((r.local, r.asymptotic), (0.0, 0.0));

        // a jump is not log-Hölder: the local constant grows like log N
        let jump = |n: usize| {
            let g = DomainGrid::new(1, 1.0, n).unwrap();
            log_holder(&ExponentField::from_fn(g, |x| if x[0] > 0.0 { 3.0 } else { 2.0 }).unwrap())
                .local
        };
        let (a, b, c3) = (jump(32), jump(128), jump(512));
        assert!(a < b && b < c3);
        // oracle: the closest straddling pair sits one cell apart
        assert!((c3 - (512.0f64 / 2.0).ln()).abs() < 1e-12);

        let g = DomainGrid::new(1, 8.0, 256).unwrap();
        let p = ExponentField::from_fn(g, |x: [f64; 2]| {
            2.0 + 1.0 / (std::f64::consts::E + x[0].abs()).ln()
        })
        .unwrap()
        .with_p_infinity(2.0);
        let r = log_holder(&p);
        assert!(r.asymptotic <= 1.0 + 1e-12);
        assert!(r.asymptotic > 0.99);
    }

    #[test]
    fn cube_exponent_examples() {
        let g = grid(16);
        let q0 = DyadicCube::root(1);
        let two = ExponentField::constant(g, 2.0).unwrap();
        let ce = cube_exponents(&[two], 0.0, &q0).unwrap();
        assert_eq!((ce.eta, ce.delta, ce.harmonic_means[0]), (2.0, 2.0, 2.0));
        let four = ExponentField::constant(g, 4.0).unwrap();
        let ce = cube_exponents(&[four.clone(), four], 0.0, &q0).unwrap();
        assert_eq!(ce.eta, 2.0);

        let p1 = ExponentField::from_unit_fn(g, |u| 2.0 + u[0]).unwrap();
        let p2 = ExponentField::from_unit_fn(g, |u| 3.0 - u[0] * u[0]).unwrap();
        let q = DyadicCube::new(1, Shift::ZERO, 2, [1, 0]);
        let ce = cube_exponents(&[p1.clone(), p2.clone()], 0.3, &q).unwrap();
        // oracle: scan cells 4..8 directly
        let (mut m1, mut m2) = (f64::MAX, f64::MAX);
        for i in 4..8 {
            m1 = m1.min(p1.values()[i]);
            m2 = m2.min(p2.values()[i]);
        }
        let inv_eta = 1.0 / m1 + 1.0 / m2;
        assert!((ce.eta - 1.0 / inv_eta).abs() < 1e-14);
        assert!((ce.delta - 1.0 / (inv_eta - 0.3)).abs() < 1e-14);
        assert!(cube_exponents(&[p1], 0.9, &q).is_err());
    }

    #[test]
    fn delta_below_q_minus_on_every_cube() {
        let g = grid(64);
        let p1 = ExponentField::from_unit_fn(g, |u| 2.0 + 0.7 * (5.0 * u[0]).sin()).unwrap();
        let p2 = ExponentField::from_unit_fn(g, |u| 3.0 + u[0]).unwrap();
        let alpha = 0.4;
        let p = reciprocal_sum(&[p1.clone(), p2.clone()]).unwrap();
        let q = derive_q(&p, alpha, 1, 2).unwrap();
        for cube in &dyadic_family(&g, 6).unwrap() {
            let ce = cube_exponents(&[p1.clone(), p2.clone()], alpha, cube).unwrap();
            let (q_lo, q_hi) = q.range_on(&cube.cell_box(&g)).unwrap();
            assert!(ce.delta <= q_lo * (1.0 + 1e-12));
            assert!(q_lo <= q_hi && q_hi <= q.p_plus());
        }
    }
}
