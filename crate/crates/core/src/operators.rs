//! Multilinear fractional maximal, averaging and integral operators, the
//! sharp and weighted dyadic maximal operators, and the Calderón–Zygmund
//! stopping-time decomposition with its sparse bound.
//!
//! Functions are extended by zero outside the domain, so a cube that sticks
//! out of the domain is still averaged over its full volume.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VarlexError};
use crate::grid::{
    dyadic_family, enumerate_cubes, CellBox, CellSums, CubeFamily, DomainGrid, DyadicCube,
    GridField, Shift,
};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    FractionalMaximal,
    FullFractionalMaximal,
    FractionalAverage,
    FractionalIntegral,
    SharpMaximal,
    WeightedDyadicMaximal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorParams {
    pub alpha: f64,
    pub m: usize,
    pub shifts: Vec<Shift>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorOutput<T> {
    pub field: GridField<T>,
    pub op: OperatorKind,
    pub params: OperatorParams,
}

fn check_alpha<T: Real>(alpha: T, m: usize, dim: usize) -> Result<()> {
    let limit = T::from_usize_lossy(m * dim);
    if alpha >= T::zero() && alpha < limit {
        Ok(())
    } else {
        Err(VarlexError::BadOrder {
            alpha: alpha.to_f64_lossy(),
            limit: limit.to_f64_lossy(),
        })
    }
}

fn check_inputs<T: Real>(fs: &[GridField<T>]) -> Result<DomainGrid<T>> {
    let first = fs.first().ok_or(VarlexError::Empty("function list"))?;
    for f in fs {
        f.check_same_grid(first)?;
        f.validate_finite()?;
    }
    Ok(*first.grid())
}

/// Cube products `|Q|^{α/n − m} Π ∫_Q gᵢ` with one canonical evaluation
/// order, so every code path that visits the same cube gets the same bits.
#[derive(Debug, Clone)]
pub struct CubeProducts<T> {
    grid: DomainGrid<T>,
    sums: Vec<CellSums<T>>,
    power: T,
}

impl<T: Real> CubeProducts<T> {
    pub fn new(gs: &[GridField<T>], alpha: T) -> Result<Self> {
        let grid = check_inputs(gs)?;
        let m = gs.len();
        check_alpha(alpha, m, grid.dim())?;
        Ok(Self {
            grid,
            sums: gs.iter().map(CellSums::new).collect(),
            power: alpha / T::from_usize_lossy(grid.dim()) - T::from_usize_lossy(m),
        })
    }

    pub fn grid(&self) -> &DomainGrid<T> {
        &self.grid
    }

    pub fn m(&self) -> usize {
        self.sums.len()
    }

    /// Value for a box of cells inside a cube of the given full volume.
    pub fn value(&self, b: &CellBox, volume: T) -> T {
        let vol = self.grid.cell_volume();
        let mut v = volume.powf(self.power);
        for s in &self.sums {
            v *= s.sum(b) * vol;
        }
        v
    }

    pub fn cube(&self, q: &DyadicCube) -> T {
        self.value(&q.cell_box(&self.grid), q.volume(&self.grid))
    }

    /// Value on the cell-aligned cube with lower cell `lo` and side `s` cells.
    fn window(&self, lo: [usize; 2], s: usize) -> T {
        let dim = self.grid.dim();
        let hi = [lo[0] + s, if dim == 2 { lo[1] + s } else { 1 }];
        let b = CellBox { lo, hi };
        self.value(&b, self.grid.cube_volume_in_cells(T::from_usize_lossy(s)))
    }
}

fn abs_all<T: Real>(fs: &[GridField<T>]) -> Vec<GridField<T>> {
    fs.iter().map(GridField::abs).collect()
}

/// Pointwise maximum of per-cube values over the cubes containing each cell.
fn scatter_max<T: Real>(grid: &DomainGrid<T>, cubes: &[DyadicCube], values: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); grid.n_cells()];
    for (c, &v) in cubes.iter().zip(values) {
        for i in c.cell_box(grid).cells(grid) {
            if v > out[i] {
                out[i] = v;
            }
        }
    }
    out
}

/// `max` over the cubes of the family containing `x` of `|Q|^{α/n−m}Π∫_Q|fᵢ|`.
pub fn fractional_maximal<T: Real>(
    fs: &[GridField<T>],
    alpha: T,
    cubes: &CubeFamily,
) -> Result<OperatorOutput<T>> {
    if cubes.is_empty() {
        return Err(VarlexError::Empty("cube family"));
    }
    let prod = CubeProducts::new(&abs_all(fs), alpha)?;
    let grid = *prod.grid();
    let values: Vec<T> = cubes.cubes.par_iter().map(|c| prod.cube(c)).collect();
    let out = scatter_max(&grid, &cubes.cubes, &values);
    Ok(OperatorOutput {
        field: GridField::new(grid, out)?,
        op: OperatorKind::FractionalMaximal,
        params: OperatorParams {
            alpha: alpha.to_f64_lossy(),
            m: fs.len(),
            shifts: cubes.shifts.clone(),
            delta: None,
        },
    })
}

/// `out[x] = max v[j]` over `j ∈ [x+1−s, x] ∩ [0, v.len())`, for `x < n`.
fn window_max<T: Real>(v: &[T], s: usize, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n);
    let mut dq: VecDeque<usize> = VecDeque::new();
    for x in 0..n {
        if x < v.len() {
            while dq.back().is_some_and(|&j| v[j] <= v[x]) {
                dq.pop_back();
            }
            dq.push_back(x);
        }
        while dq.front().is_some_and(|&j| j + s <= x) {
            dq.pop_front();
        }
        out.push(dq.front().map_or(T::zero(), |&j| v[j]));
    }
    out
}

/// `ℳ_α` over every cell-aligned cube inside the domain.
pub fn full_fractional_maximal<T: Real>(
    fs: &[GridField<T>],
    alpha: T,
) -> Result<OperatorOutput<T>> {
    let prod = CubeProducts::new(&abs_all(fs), alpha)?;
    let grid = *prod.grid();
    let n = grid.cells_per_axis();
    let per_side = |s: usize| -> Vec<T> {
        let w = n - s + 1;
        if grid.dim() == 1 {
            let v: Vec<T> = (0..w).map(|j| prod.window([j, 0], s)).collect();
            window_max(&v, s, n)
        } else {
            // rows of window starts, max along axis 1 then axis 0
            let rows: Vec<Vec<T>> = (0..w)
                .map(|j0| {
                    let v: Vec<T> = (0..w).map(|j1| prod.window([j0, j1], s)).collect();
                    window_max(&v, s, n)
                })
                .collect();
            let mut out = vec![T::zero(); n * n];
            for x1 in 0..n {
                let col: Vec<T> = rows.iter().map(|r| r[x1]).collect();
                for (x0, v) in window_max(&col, s, n).into_iter().enumerate() {
                    out[x0 * n + x1] = v;
                }
            }
            out
        }
    };
    let out = (1..=n).into_par_iter().map(per_side).reduce(
        || vec![T::zero(); grid.n_cells()],
        |mut a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                if y > *x {
                    *x = y;
                }
            }
            a
        },
    );
    Ok(OperatorOutput {
        field: GridField::new(grid, out)?,
        op: OperatorKind::FullFractionalMaximal,
        params: OperatorParams {
            alpha: alpha.to_f64_lossy(),
            m: fs.len(),
            shifts: Vec::new(),
            delta: None,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverReport<T> {
    /// `ℳ_α / Σ_t ℳ_α^{𝒟_t}`, zero where both vanish.
    pub ratio: GridField<T>,
    pub max_ratio: T,
    /// Whether `ℳ_α^{𝒟_0} ≤ ℳ_α` held at every cell.
    pub dyadic_dominated: bool,
}

/// Compares the full maximal operator with the sum over the `2^n` shifted
/// dyadic maximal operators of depth at most `max_depth`.
pub fn dyadic_shifted_cover_check<T: Real>(
    fs: &[GridField<T>],
    alpha: T,
    max_depth: usize,
) -> Result<CoverReport<T>> {
    let grid = check_inputs(fs)?;
    let full = full_fractional_maximal(fs, alpha)?.field;
    let mut sum = vec![T::zero(); grid.n_cells()];
    let mut dyadic_dominated = true;
    for shift in Shift::all(grid.dim()) {
        let fam = enumerate_cubes(&grid, &[shift], max_depth)?;
        let md = fractional_maximal(fs, alpha, &fam)?.field;
        if shift.is_zero() {
            dyadic_dominated = md.values().iter().zip(full.values()).all(|(d, f)| d <= f);
        }
        for (s, v) in sum.iter_mut().zip(md.values()) {
            *s += *v;
        }
    }
    let ratio: Vec<T> = full
        .values()
        .iter()
        .zip(&sum)
        .map(|(&f, &s)| {
            if s > T::zero() {
                f / s
            } else if f > T::zero() {
                T::infinity()
            } else {
                T::zero()
            }
        })
        .collect();
    let max_ratio = ratio.iter().fold(T::zero(), |a, &b| a.max(b));
    Ok(CoverReport {
        ratio: GridField::new(grid, ratio)?,
        max_ratio,
        dyadic_dominated,
    })
}

/// `𝒜_{α,B}(f⃗) = |B|^{α/n} Π⟨fᵢ⟩_B χ_B`.
pub fn fractional_average<T: Real>(
    fs: &[GridField<T>],
    alpha: T,
    b: &DyadicCube,
) -> Result<OperatorOutput<T>> {
    let prod = CubeProducts::new(fs, alpha)?;
    let grid = *prod.grid();
    let v = prod.cube(b);
    let mut out = vec![T::zero(); grid.n_cells()];
    for i in b.cell_box(&grid).cells(&grid) {
        out[i] = v;
    }
    Ok(OperatorOutput {
        field: GridField::new(grid, out)?,
        op: OperatorKind::FractionalAverage,
        params: OperatorParams {
            alpha: alpha.to_f64_lossy(),
            m: fs.len(),
            shifts: vec![b.shift],
            delta: None,
        },
    })
}

/// Default tuple budget for [`fractional_integral`].
pub const INTEGRAL_BUDGET: u128 = 1 << 24;

/// Kenig–Stein `ℐ_α(f⃗)(x) = ∫ Πfᵢ(yᵢ) (Σ|x − yᵢ|)^{α − mn} dy⃗` by a tuple sum.
///
/// The tuple with every `yᵢ` in the cell of `x` is evaluated at distance
/// `m·h/2`. `budget` caps `N^{mn}`, the number of tuples per output cell.
pub fn fractional_integral<T: Real>(
    fs: &[GridField<T>],
    alpha: T,
    budget: Option<u128>,
) -> Result<OperatorOutput<T>> {
    let grid = check_inputs(fs)?;
    let m = fs.len();
    let dim = grid.dim();
    if !(alpha > T::zero()) {
        return Err(VarlexError::BadOrder {
            alpha: alpha.to_f64_lossy(),
            limit: (m * dim) as f64,
        });
    }
    check_alpha(alpha, m, dim)?;
    let n_cells = grid.n_cells();
    let requested = (n_cells as u128).checked_pow(m as u32).unwrap_or(u128::MAX);
    let budget = budget.unwrap_or(INTEGRAL_BUDGET);
    if requested > budget {
        return Err(VarlexError::CostBudget { requested, budget });
    }
    let expo = alpha - T::from_usize_lossy(m * dim);
    let vol_m = grid.cell_volume().powi(m as i32);
    let diag = T::from_usize_lossy(m) * grid.cell_width() * T::lit(0.5);
    let support: Vec<Vec<usize>> = fs
        .iter()
        .map(|f| {
            (0..n_cells)
                .filter(|&i| f.values()[i] != T::zero())
                .collect()
        })
        .collect();
    let out: Vec<T> = (0..n_cells)
        .into_par_iter()
        .map(|x| {
            let dist: Vec<T> = (0..n_cells).map(|y| grid.distance(x, y)).collect();
            let mut total = T::zero();
            let mut idx = vec![0usize; m];
            if support.iter().any(Vec::is_empty) {
                return T::zero();
            }
            loop {
                let mut prod = T::one();
                let mut d = T::zero();
                let mut diagonal = true;
                for (i, &k) in idx.iter().enumerate() {
                    let y = support[i][k];
                    prod *= fs[i].values()[y];
                    d += dist[y];
                    diagonal &= y == x;
                }
                if diagonal {
                    d = diag;
                }
                total += prod * d.powf(expo);
                // advance the mixed-radix counter
                let mut slot = 0;
                loop {
                    if slot == m {
                        return total * vol_m;
                    }
                    idx[slot] += 1;
                    if idx[slot] < support[slot].len() {
                        break;
                    }
                    idx[slot] = 0;
                    slot += 1;
                }
            }
        })
        .collect();
    Ok(OperatorOutput {
        field: GridField::new(grid, out)?,
        op: OperatorKind::FractionalIntegral,
        params: OperatorParams {
            alpha: alpha.to_f64_lossy(),
            m,
            shifts: Vec::new(),
            delta: None,
        },
    })
}

/// Mean oscillation of `g` over the cells of `b`, zero-extended to a cube of
/// the given full volume.
fn oscillation<T: Real>(g: &GridField<T>, sums: &CellSums<T>, b: &CellBox, volume: T) -> T {
    let grid = g.grid();
    let vol = grid.cell_volume();
    let mean = sums.sum(b) * vol / volume;
    let inside: T = b
        .cells(grid)
        .map(|i| (g.values()[i] - mean).abs())
        .sum::<T>()
        * vol;
    let outside = (volume - T::from_usize_lossy(b.len()) * vol).max(T::zero()) * mean.abs();
    (inside + outside) / volume
}

/// `M_δ^♯ f = (M^♯(|f|^δ))^{1/δ}` over a cube family.
pub fn sharp_maximal<T: Real>(
    f: &GridField<T>,
    delta: T,
    cubes: &CubeFamily,
) -> Result<OperatorOutput<T>> {
    if !(delta > T::zero()) {
        return Err(VarlexError::Invalid(format!(
            "sharp maximal power {delta} must be positive"
        )));
    }
    if cubes.is_empty() {
        return Err(VarlexError::Empty("cube family"));
    }
    f.validate_finite()?;
    let g = f.map(|v| v.abs().powf(delta));
    let sums = CellSums::new(&g);
    let grid = *f.grid();
    let values: Vec<T> = cubes
        .cubes
        .par_iter()
        .map(|c| oscillation(&g, &sums, &c.cell_box(&grid), c.volume(&grid)))
        .collect();
    let out = scatter_max(&grid, &cubes.cubes, &values)
        .into_iter()
        .map(|v| v.powf(delta.recip()))
        .collect();
    Ok(OperatorOutput {
        field: GridField::new(grid, out)?,
        op: OperatorKind::SharpMaximal,
        params: OperatorParams {
            alpha: 0.0,
            m: 1,
            shifts: cubes.shifts.clone(),
            delta: Some(delta.to_f64_lossy()),
        },
    })
}

/// `M_σ^{𝒟} f(x) = max_{Q ∋ x} σ(Q)^{−1} ∫_Q |f| σ`.
pub fn weighted_dyadic_maximal<T: Real>(
    f: &GridField<T>,
    sigma: &GridField<T>,
    cubes: &CubeFamily,
) -> Result<OperatorOutput<T>> {
    if cubes.is_empty() {
        return Err(VarlexError::Empty("cube family"));
    }
    sigma.validate_weight()?;
    f.validate_finite()?;
    let fs = f.abs().mul(sigma)?;
    let num = CellSums::new(&fs);
    let den = CellSums::new(sigma);
    let grid = *f.grid();
    let values: Vec<T> = cubes
        .cubes
        .par_iter()
        .map(|c| {
            let b = c.cell_box(&grid);
            if b.is_empty() {
                T::zero()
            } else {
                num.sum(&b) / den.sum(&b)
            }
        })
        .collect();
    let out = scatter_max(&grid, &cubes.cubes, &values);
    Ok(OperatorOutput {
        field: GridField::new(grid, out)?,
        op: OperatorKind::WeightedDyadicMaximal,
        params: OperatorParams {
            alpha: 0.0,
            m: 1,
            shifts: cubes.shifts.clone(),
            delta: None,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingCube<T> {
    pub cube: DyadicCube,
    /// `|Q|^{α/n} Π⟨fᵢσᵢ⟩_Q`
    pub product: T,
    /// Cells of `E = Q \ Ω_{k+1}`, ascending.
    pub residual_cells: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CzLevel<T> {
    pub k: i32,
    pub cubes: Vec<StoppingCube<T>>,
    /// Cells of `Ω_k`, ascending.
    #[serde(skip)]
    pub omega: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CzDecomposition<T> {
    pub a: T,
    #[serde(skip)]
    pub alpha: T,
    #[serde(skip)]
    pub m: usize,
    pub levels: Vec<CzLevel<T>>,
}

/// Level range making every positive value of the dyadic maximal function
/// fall in some `(a^k, a^{k+1}]` with `k` in range; `None` when it vanishes.
fn default_k_range<T: Real>(values: &[T], a: T) -> Option<(i32, i32)> {
    let mut lo = T::infinity();
    let mut hi = T::zero();
    for &v in values {
        if v > T::zero() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if hi == T::zero() {
        return None;
    }
    let la = a.ln();
    let k_lo = ((lo.ln() / la).floor() - T::one()).to_i32()?;
    let k_hi = (hi.ln() / la).ceil().to_i32()?;
    Some((k_lo, k_hi))
}

fn dyadic_maximal_values<T: Real>(prod: &CubeProducts<T>) -> Result<Vec<T>> {
    let grid = *prod.grid();
    let fam = dyadic_family(&grid, grid.levels())?;
    let values: Vec<T> = fam.cubes.par_iter().map(|c| prod.cube(c)).collect();
    Ok(scatter_max(&grid, &fam.cubes, &values))
}

/// Calderón–Zygmund stopping cubes for `P(Q) = |Q|^{α/n}Π⟨fᵢσᵢ⟩_Q` over the
/// unshifted dyadic cubes, for each `k` in `k_range` (inclusive).
///
/// The search starts from an ancestor of the domain with `P ≤ a^{k_min}`, so
/// every stopping cube has a parent with `P ≤ a^k`, and the invariants are
/// checked before returning.
pub fn cz_decompose<T: Real>(
    fs: &[GridField<T>],
    sigmas: &[GridField<T>],
    alpha: T,
    a: T,
    k_range: Option<(i32, i32)>,
) -> Result<CzDecomposition<T>> {
    if fs.len() != sigmas.len() {
        return Err(VarlexError::ShapeMismatch {
            expected: fs.len(),
            got: sigmas.len(),
        });
    }
    let gs = fs
        .iter()
        .zip(sigmas)
        .map(|(f, s)| f.mul(s))
        .collect::<Result<Vec<_>>>()?;
    if let Some(cell) = gs
        .iter()
        .flat_map(|g| g.values().iter().position(|&v| v < T::zero()))
        .next()
    {
        return Err(VarlexError::InvalidWeight {
            cell,
            value: f64::NAN,
        });
    }
    let prod = CubeProducts::new(&gs, alpha)?;
    let grid = *prod.grid();
    let m = gs.len();
    let bound = T::lit(2.0).powf(T::from_usize_lossy(m * grid.dim()) - alpha);
    if !(a > bound) {
        return Err(VarlexError::BaseTooSmall {
            a: a.to_f64_lossy(),
            bound: bound.to_f64_lossy(),
        });
    }
    let k_range = match k_range {
        Some(r) => Some(r),
        None => default_k_range(&dyadic_maximal_values(&prod)?, a),
    };
    let Some((k_min, k_max)) = k_range else {
        return Ok(CzDecomposition {
            a,
            alpha,
            m,
            levels: Vec::new(),
        });
    };
    if k_min > k_max {
        return Err(VarlexError::Invalid(format!(
            "empty level range {k_min}..={k_max}"
        )));
    }

    let mut top = DyadicCube::root(grid.dim());
    let floor = a.powi(k_min);
    let mut guard = 0;
    while prod.cube(&top) > floor {
        top = top.parent();
        guard += 1;
        if guard > 2000 {
            return Err(VarlexError::Invariant(
                "no ancestor below the lowest level".into(),
            ));
        }
    }

    let max_depth = grid.levels() as i32;
    let search = |k: i32| -> Vec<(DyadicCube, T)> {
        let threshold = a.powi(k);
        let mut found = Vec::new();
        let mut stack = vec![top];
        while let Some(q) = stack.pop() {
            let p = prod.cube(&q);
            if p > threshold {
                found.push((q, p));
            } else if q.depth < max_depth && p > T::zero() {
                stack.extend(q.children().into_iter().filter(DyadicCube::meets_domain));
            }
        }
        found.sort_by_key(|(q, _)| *q);
        found
    };
    let found: Vec<Vec<(DyadicCube, T)>> =
        (k_min..=k_max + 1).into_par_iter().map(search).collect();

    let n_cells = grid.n_cells();
    let omegas: Vec<Vec<bool>> = found
        .iter()
        .map(|cubes| {
            let mut mask = vec![false; n_cells];
            for (q, _) in cubes {
                for i in q.cell_box(&grid).cells(&grid) {
                    mask[i] = true;
                }
            }
            mask
        })
        .collect();
    let mut levels = Vec::with_capacity(found.len() - 1);
    for (idx, cubes) in found.iter().enumerate().take(found.len() - 1) {
        let next = &omegas[idx + 1];
        let cubes = cubes
            .iter()
            .map(|(q, p)| StoppingCube {
                cube: *q,
                product: *p,
                residual_cells: q
                    .cell_box(&grid)
                    .cells(&grid)
                    .filter(|&i| !next[i])
                    .collect(),
            })
            .collect();
        levels.push(CzLevel {
            k: k_min + idx as i32,
            cubes,
            omega: (0..n_cells).filter(|&i| omegas[idx][i]).collect(),
        });
    }
    let dec = CzDecomposition {
        a,
        alpha,
        m,
        levels,
    };
    dec.verify(&prod)?;
    Ok(dec)
}

impl<T: Real> CzDecomposition<T> {
    fn verify(&self, prod: &CubeProducts<T>) -> Result<()> {
        let grid = prod.grid();
        let bound = T::lit(2.0).powf(T::from_usize_lossy(self.m * grid.dim()) - self.alpha);
        let mut owner = vec![false; grid.n_cells()];
        for (li, level) in self.levels.iter().enumerate() {
            let threshold = self.a.powi(level.k);
            let mut seen = vec![false; grid.n_cells()];
            for sc in &level.cubes {
                let p = prod.cube(&sc.cube);
                if p != sc.product || !(threshold < p && p <= bound * threshold) {
                    return Err(VarlexError::Invariant(format!(
                        "stopping inequality fails on {} at k = {}",
                        sc.cube, level.k
                    )));
                }
                if !(prod.cube(&sc.cube.parent()) <= threshold) {
                    return Err(VarlexError::Invariant(format!(
                        "{} is not maximal at k = {}",
                        sc.cube, level.k
                    )));
                }
                for i in sc.cube.cell_box(grid).cells(grid) {
                    if std::mem::replace(&mut seen[i], true) {
                        return Err(VarlexError::Invariant(format!(
                            "overlapping stopping cubes at k = {}",
                            level.k
                        )));
                    }
                }
                for &i in &sc.residual_cells {
                    if std::mem::replace(&mut owner[i], true) {
                        return Err(VarlexError::Invariant(format!(
                            "residual sets overlap at cell {i}"
                        )));
                    }
                }
            }
            if let Some(next) = self.levels.get(li + 1) {
                let here: std::collections::HashSet<usize> = level.omega.iter().copied().collect();
                if next.omega.iter().any(|i| !here.contains(i)) {
                    return Err(VarlexError::Invariant(format!(
                        "level sets not nested at k = {}",
                        next.k
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_cubes(&self) -> usize {
        self.levels.iter().map(|l| l.cubes.len()).sum()
    }

    /// Total residual volume `Σ|E_j^k|` in cells.
    pub fn residual_cells(&self) -> usize {
        self.levels
            .iter()
            .flat_map(|l| &l.cubes)
            .map(|c| c.residual_cells.len())
            .sum()
    }

    /// `Σ_{k,j} P(Q_j^k) χ_{E_j^k}`.
    pub fn sparse_sum(&self, grid: &DomainGrid<T>) -> Vec<T> {
        let mut out = vec![T::zero(); grid.n_cells()];
        for sc in self.levels.iter().flat_map(|l| &l.cubes) {
            for &i in &sc.residual_cells {
                out[i] += sc.product;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseReport<T> {
    /// `max ℳ_α^d / sparse sum` over cells where the sum is positive.
    pub max_ratio: T,
    pub argmax_cell: Option<usize>,
    /// Cells with positive `ℳ_α^d` that no residual set covers.
    pub uncovered_cells: Vec<usize>,
}

/// Pointwise comparison of the dyadic maximal operator with the sparse sum.
pub fn sparse_domination_check<T: Real>(
    dec: &CzDecomposition<T>,
    fs: &[GridField<T>],
    sigmas: &[GridField<T>],
    alpha: T,
) -> Result<SparseReport<T>> {
    let gs = fs
        .iter()
        .zip(sigmas)
        .map(|(f, s)| f.mul(s))
        .collect::<Result<Vec<_>>>()?;
    let prod = CubeProducts::new(&gs, alpha)?;
    let grid = *prod.grid();
    let md = dyadic_maximal_values(&prod)?;
    let sparse = dec.sparse_sum(&grid);
    let mut max_ratio = T::zero();
    let mut argmax_cell = None;
    let mut uncovered_cells = Vec::new();
    for (i, (&v, &s)) in md.iter().zip(&sparse).enumerate() {
        if s > T::zero() {
            let r = v / s;
            if r > max_ratio {
                max_ratio = r;
                argmax_cell = Some(i);
            }
        } else if v > T::zero() {
            uncovered_cells.push(i);
        }
    }
    Ok(SparseReport {
        max_ratio,
        argmax_cell,
        uncovered_cells,
    })
}
