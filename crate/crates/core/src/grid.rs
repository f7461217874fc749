//! Uniform cell grids over `[-L, L)^n`, grid-sampled fields, and the dyadic
//! and 1/3-shifted dyadic cube families built on top of them.
//!
//! Cubes are described in *unit coordinates*: the domain `[-L, L)^n` is
//! mapped affinely onto `[0, 1)^n`, and a cube of shift `t`, depth `k` and
//! corner `j` is `2^{-k}((-1)^k t + j + [0,1)^n)`. Negative depths denote the
//! enclosing ancestors of the domain (`[0, 2^{|k|})^n` and friends). A grid
//! cell belongs to a cube iff its center does; membership is decided in exact
//! integer arithmetic, so shifted cubes are unambiguous.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VarlexError};
use crate::scalar::Real;

/// Uniform discretization of `[-L, L)^n` into `N^n` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainGrid<T> {
    dim: usize,
    half_width: T,
    cells_per_axis: usize,
    levels: usize,
}

impl<T: Real> DomainGrid<T> {
    pub fn new(dim: usize, half_width: T, cells_per_axis: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(VarlexError::UnsupportedDimension(dim));
        }
        if !cells_per_axis.is_power_of_two() {
            return Err(VarlexError::NotPowerOfTwo(cells_per_axis));
        }
        if !(half_width > T::zero() && half_width.is_finite()) {
            return Err(VarlexError::BadHalfWidth(half_width.to_f64_lossy()));
        }
        Ok(Self {
            dim,
            half_width,
            cells_per_axis,
            levels: cells_per_axis.trailing_zeros() as usize,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> T {
        self.half_width
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    /// `log2 N`: the deepest depth whose cubes are unions of whole cells.
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn n_cells(&self) -> usize {
        self.cells_per_axis.pow(self.dim as u32)
    }

    pub fn side(&self) -> T {
        self.half_width + self.half_width
    }

    pub fn cell_width(&self) -> T {
        self.side() / T::from_usize_lossy(self.cells_per_axis)
    }

    pub fn cell_volume(&self) -> T {
        self.cell_width().powi(self.dim as i32)
    }

    pub fn domain_volume(&self) -> T {
        self.side().powi(self.dim as i32)
    }

    /// Volume of an axis-aligned cube whose side spans `side_cells` cell widths.
    pub fn cube_volume_in_cells(&self, side_cells: T) -> T {
        (side_cells * self.cell_width()).powi(self.dim as i32)
    }

    /// Row-major multi-index of a flat cell index; unused axes are 0.
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        match self.dim {
            1 => [idx, 0],
            _ => [idx / self.cells_per_axis, idx % self.cells_per_axis],
        }
    }

    pub fn flat_index(&self, mi: [usize; 2]) -> usize {
        match self.dim {
            1 => mi[0],
            _ => mi[0] * self.cells_per_axis + mi[1],
        }
    }

    /// Cell center in unit coordinates `[0,1)^n`.
    pub fn unit_center(&self, idx: usize) -> [T; 2] {
        let mi = self.multi_index(idx);
        let n = T::from_usize_lossy(self.cells_per_axis);
        let half = T::lit(0.5);
        let mut u = [T::zero(); 2];
        for (a, ua) in u.iter_mut().enumerate().take(self.dim) {
            *ua = (T::from_usize_lossy(mi[a]) + half) / n;
        }
        u
    }

    /// Cell center in physical coordinates.
    pub fn cell_center(&self, idx: usize) -> [T; 2] {
        let u = self.unit_center(idx);
        let mut x = [T::zero(); 2];
        for a in 0..self.dim {
            x[a] = u[a] * self.side() - self.half_width;
        }
        x
    }

    pub fn distance(&self, a: usize, b: usize) -> T {
        let (xa, xb) = (self.cell_center(a), self.cell_center(b));
        let mut s = T::zero();
        for k in 0..self.dim {
            s += (xa[k] - xb[k]) * (xa[k] - xb[k]);
        }
        s.sqrt()
    }

    pub fn norm(&self, idx: usize) -> T {
        let x = self.cell_center(idx);
        let mut s = T::zero();
        for xk in x.iter().take(self.dim) {
            s += *xk * *xk;
        }
        s.sqrt()
    }

    /// The box of all cells.
    pub fn full_box(&self) -> CellBox {
        let n = self.cells_per_axis;
        CellBox {
            lo: [0, 0],
            hi: [n, if self.dim == 2 { n } else { 1 }],
        }
    }

    pub fn same_geometry(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.cells_per_axis == other.cells_per_axis
            && self.half_width == other.half_width
    }
}

/// Half-open box of cells `[lo, hi)` per axis. In 1-D the second axis is `[0,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellBox {
    pub lo: [usize; 2],
    pub hi: [usize; 2],
}

impl CellBox {
    pub fn is_empty(&self) -> bool {
        self.hi[0] <= self.lo[0] || self.hi[1] <= self.lo[1]
    }

    pub fn len(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])
        }
    }

    /// Flat cell indices, row-major.
    pub fn cells<'a, T: Real>(
        &'a self,
        grid: &'a DomainGrid<T>,
    ) -> impl Iterator<Item = usize> + 'a {
        let empty = self.is_empty();
        let (r0, r1) = if empty {
            (0..0, 0..0)
        } else {
            (self.lo[0]..self.hi[0], self.lo[1]..self.hi[1])
        };
        r0.flat_map(move |i| r1.clone().map(move |j| grid.flat_index([i, j])))
    }

    pub fn contains_cell<T: Real>(&self, grid: &DomainGrid<T>, idx: usize) -> bool {
        let mi = grid.multi_index(idx);
        (0..2).all(|a| self.lo[a] <= mi[a] && mi[a] < self.hi[a])
    }
}

/// Scalar samples, one per grid cell (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct GridField<T> {
    grid: DomainGrid<T>,
    values: Vec<T>,
}

impl<T: Real> GridField<T> {
    pub fn new(grid: DomainGrid<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(VarlexError::ShapeMismatch {
                expected: grid.n_cells(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: DomainGrid<T>, c: T) -> Self {
        Self {
            grid,
            values: vec![c; grid.n_cells()],
        }
    }

    /// Samples `f` at physical cell centers.
    pub fn from_fn(grid: DomainGrid<T>, f: impl Fn([T; 2]) -> T) -> Self {
        let values = (0..grid.n_cells())
            .map(|i| f(grid.cell_center(i)))
            .collect();
        Self { grid, values }
    }

    /// Samples `f` at cell centers expressed in unit coordinates `[0,1)^n`.
    pub fn from_unit_fn(grid: DomainGrid<T>, f: impl Fn([T; 2]) -> T) -> Self {
        let values = (0..grid.n_cells())
            .map(|i| f(grid.unit_center(i)))
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &DomainGrid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn abs(&self) -> Self {
        self.map(|v| v.abs())
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Riemann sum of the field over the whole domain.
    pub fn integral(&self) -> T {
        self.values.iter().copied().sum::<T>() * self.grid.cell_volume()
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.grid.same_geometry(&other.grid) {
            Ok(())
        } else {
            Err(VarlexError::GridMismatch)
        }
    }

    /// Rejects any cell that is not strictly positive and finite.
    pub fn validate_weight(&self) -> Result<()> {
        for (cell, &v) in self.values.iter().enumerate() {
            if !(v > T::zero() && v.is_finite()) {
                return Err(VarlexError::InvalidWeight {
                    cell,
                    value: v.to_f64_lossy(),
                });
            }
        }
        Ok(())
    }

    pub fn validate_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(cell) => Err(VarlexError::NonFinite { cell }),
            None => Ok(()),
        }
    }

    pub fn to_json(&self) -> GridFieldJson {
        GridFieldJson {
            n: self.grid.dim,
            half_width: self.grid.half_width.to_f64_lossy(),
            cells_per_axis: self.grid.cells_per_axis,
            values: self.values.iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }

    pub fn from_json(json: &GridFieldJson) -> Result<Self> {
        let grid = DomainGrid::new(json.n, T::lit(json.half_width), json.cells_per_axis)?;
        let values = json.values.iter().map(|&v| T::lit(v)).collect();
        Self::new(grid, values)
    }
}

/// On-disk form of a [`GridField`]: `{n, L, N, values}` with row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFieldJson {
    pub n: usize,
    #[serde(rename = "L")]
    pub half_width: f64,
    #[serde(rename = "N")]
    pub cells_per_axis: usize,
    pub values: Vec<f64>,
}

/// Per-axis shift selector: bit `a` set means `t_a = 1/3`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
pub struct Shift(pub u8);

impl Shift {
    pub const ZERO: Shift = Shift(0);

    /// All `2^n` shifts of `{0, 1/3}^n`.
    pub fn all(dim: usize) -> Vec<Shift> {
        (0..(1u8 << dim)).map(Shift).collect()
    }

    pub fn is_shifted(&self, axis: usize) -> bool {
        self.0 >> axis & 1 == 1
    }

    pub fn is_zero(&self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for Shift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = (0..2)
            .map(|a| if self.is_shifted(a) { "1/3" } else { "0" })
            .collect();
        write!(f, "({})", parts.join(";"))
    }
}

/// A cube `2^{-k}((-1)^k t + j + [0,1)^n)` in unit coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicCube {
    pub shift: Shift,
    pub depth: i32,
    pub corner: [i64; 2],
    pub dim: u8,
}

impl DyadicCube {
    pub fn new(dim: usize, shift: Shift, depth: i32, corner: [i64; 2]) -> Self {
        Self {
            shift,
            depth,
            corner,
            dim: dim as u8,
        }
    }

    /// The whole domain `[0,1)^n`.
    pub fn root(dim: usize) -> Self {
        Self::new(dim, Shift::ZERO, 0, [0, 0])
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    fn sign(&self) -> i64 {
        if self.depth.rem_euclid(2) == 0 {
            1
        } else {
            -1
        }
    }

    /// Lower corner along `axis` as a fraction `num / (3 * 2^depth)`; negative
    /// depths are handled by [`Self::lower_unit`].
    fn lower_thirds(&self, axis: usize) -> i128 {
        let t = i64::from(self.shift.is_shifted(axis));
        (self.sign() * t + 3 * self.corner[axis]) as i128
    }

    /// Lower corner in unit coordinates.
    pub fn lower_unit<T: Real>(&self, axis: usize) -> T {
        let a = T::from_i128(self.lower_thirds(axis)).expect("small integer");
        a / T::lit(3.0) * T::lit(2.0).powi(-self.depth)
    }

    /// Side length in unit coordinates, `2^{-k}`.
    pub fn side_unit<T: Real>(&self) -> T {
        T::lit(2.0).powi(-self.depth)
    }

    pub fn side<T: Real>(&self, grid: &DomainGrid<T>) -> T {
        grid.side() * self.side_unit::<T>()
    }

    /// Lebesgue measure of the full cube (not clipped to the domain).
    pub fn volume<T: Real>(&self, grid: &DomainGrid<T>) -> T {
        grid.cube_volume_in_cells(
            T::from_usize_lossy(grid.cells_per_axis()) * self.side_unit::<T>(),
        )
    }

    /// Cells whose centers lie in the cube, as a (possibly empty) box.
    pub fn cell_box<T: Real>(&self, grid: &DomainGrid<T>) -> CellBox {
        let n = grid.cells_per_axis() as i128;
        let mut lo = [0usize, 0];
        let mut hi = [1usize, 1];
        // center (2c+1)/(2N) in [a/(3*2^k), (a+3)/(3*2^k))
        // <=> num_scale*a <= den_scale*(2c+1) < num_scale*(a+3)
        let (num_scale, den_scale) = if self.depth >= 0 {
            (2 * n, 3i128 << self.depth)
        } else {
            ((2 * n) << (-self.depth), 3i128)
        };
        for axis in 0..self.dim() {
            let a = self.lower_thirds(axis);
            let first = first_cell_at_or_after(num_scale * a, den_scale);
            let end = first_cell_at_or_after(num_scale * (a + 3), den_scale);
            lo[axis] = first.clamp(0, n) as usize;
            hi[axis] = end.clamp(0, n) as usize;
        }
        CellBox { lo, hi }
    }

    pub fn parent(&self) -> Self {
        let mut corner = [0i64; 2];
        for (axis, c) in corner.iter_mut().enumerate().take(self.dim()) {
            let t = i64::from(self.shift.is_shifted(axis));
            *c = (self.corner[axis] + self.sign() * t).div_euclid(2);
        }
        Self::new(self.dim(), self.shift, self.depth - 1, corner)
    }

    pub fn children(&self) -> Vec<Self> {
        let child_depth = self.depth + 1;
        let child_sign = if child_depth.rem_euclid(2) == 0 {
            1
        } else {
            -1
        };
        let mut base = [0i64; 2];
        for (axis, b) in base.iter_mut().enumerate().take(self.dim()) {
            let t = i64::from(self.shift.is_shifted(axis));
            *b = 2 * self.corner[axis] - child_sign * t;
        }
        let mut out = Vec::with_capacity(1 << self.dim());
        for bits in 0..(1u8 << self.dim()) {
            let mut c = [0i64; 2];
            for axis in 0..self.dim() {
                c[axis] = base[axis] + i64::from(bits >> axis & 1);
            }
            out.push(Self::new(self.dim(), self.shift, child_depth, c));
        }
        out
    }

    /// Geometric intersection with the open unit cube.
    pub fn meets_domain(&self) -> bool {
        (0..self.dim()).all(|axis| {
            let a = self.lower_thirds(axis);
            if self.depth >= 0 {
                a < (3i128 << self.depth) && a + 3 > 0
            } else {
                a < 3 && a + 3 > 0
            }
        })
    }

    pub fn contains(&self, other: &DyadicCube) -> bool {
        if self.shift != other.shift || other.depth < self.depth {
            return false;
        }
        let mut c = *other;
        while c.depth > self.depth {
            c = c.parent();
        }
        c == *self
    }
}

impl fmt::Display for DyadicCube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Q[t={},k={},j=({}",
            self.shift, self.depth, self.corner[0]
        )?;
        if self.dim == 2 {
            write!(f, ",{}", self.corner[1])?;
        }
        write!(f, ")]")
    }
}

/// Smallest integer `c` with `den * (2c + 1) >= bound`.
fn first_cell_at_or_after(bound: i128, den: i128) -> i128 {
    // 2c + 1 >= ceil(bound / den)  <=>  c >= ceil((ceil(bound/den) - 1) / 2)
    let q = div_ceil(bound, den);
    div_ceil(q - 1, 2)
}

fn div_ceil(a: i128, b: i128) -> i128 {
    let d = a.div_euclid(b);
    if a.rem_euclid(b) == 0 {
        d
    } else {
        d + 1
    }
}

/// A finite collection of cubes drawn from one or more shifted dyadic systems.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeFamily {
    pub cubes: Vec<DyadicCube>,
    pub shifts: Vec<Shift>,
    pub max_depth: usize,
}

impl CubeFamily {
    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DyadicCube> {
        self.cubes.iter()
    }

    /// Restriction to one shift.
    pub fn with_shift(&self, shift: Shift) -> CubeFamily {
        CubeFamily {
            cubes: self
                .cubes
                .iter()
                .filter(|c| c.shift == shift)
                .copied()
                .collect(),
            shifts: vec![shift],
            max_depth: self.max_depth,
        }
    }

    /// CSV export: `shift,depth,corner0[,corner1],side`.
    pub fn to_csv<T: Real>(&self, grid: &DomainGrid<T>) -> String {
        let mut out = String::from(if grid.dim() == 2 {
            "shift,depth,corner0,corner1,side\n"
        } else {
            "shift,depth,corner0,side\n"
        });
        for c in &self.cubes {
            let shift: Vec<&str> = (0..grid.dim())
                .map(|a| if c.shift.is_shifted(a) { "1/3" } else { "0" })
                .collect();
            out.push_str(&shift.join(";"));
            out.push_str(&format!(",{},{}", c.depth, c.corner[0]));
            if grid.dim() == 2 {
                out.push_str(&format!(",{}", c.corner[1]));
            }
            out.push_str(&format!(",{}\n", c.side(grid)));
        }
        out
    }
}

impl<'a> IntoIterator for &'a CubeFamily {
    type Item = &'a DyadicCube;
    type IntoIter = std::slice::Iter<'a, DyadicCube>;
    fn into_iter(self) -> Self::IntoIter {
        self.cubes.iter()
    }
}

pub fn build_domain<T: Real>(
    dim: usize,
    half_width: T,
    cells_per_axis: usize,
) -> Result<DomainGrid<T>> {
    DomainGrid::new(dim, half_width, cells_per_axis)
}

/// Every cube of each requested shift, depths `0..=max_depth`, that meets the domain.
pub fn enumerate_cubes<T: Real>(
    grid: &DomainGrid<T>,
    shifts: &[Shift],
    max_depth: usize,
) -> Result<CubeFamily> {
    if shifts.is_empty() {
        return Err(VarlexError::Empty("shift set"));
    }
    if max_depth > grid.levels() && shifts.iter().any(Shift::is_zero) {
        return Err(VarlexError::DepthExceedsResolution {
            depth: max_depth,
            max: grid.levels(),
        });
    }
    let dim = grid.dim();
    let mut cubes = Vec::new();
    for &shift in shifts {
        for depth in 0..=max_depth as i32 {
            let count = 1i64 << depth;
            let range = || -1..=count;
            for j0 in range() {
                if dim == 1 {
                    let c = DyadicCube::new(1, shift, depth, [j0, 0]);
                    if c.meets_domain() {
                        cubes.push(c);
                    }
                } else {
                    for j1 in range() {
                        let c = DyadicCube::new(2, shift, depth, [j0, j1]);
                        if c.meets_domain() {
                            cubes.push(c);
                        }
                    }
                }
            }
        }
    }
    Ok(CubeFamily {
        cubes,
        shifts: shifts.to_vec(),
        max_depth,
    })
}

/// The unshifted dyadic family of depths `0..=max_depth`.
pub fn dyadic_family<T: Real>(grid: &DomainGrid<T>, max_depth: usize) -> Result<CubeFamily> {
    enumerate_cubes(grid, &[Shift::ZERO], max_depth)
}

/// `∫_Q f` as the sum of cell values times cell volume over cells centered in `Q`.
pub fn integrate_over<T: Real>(cube: &DyadicCube, field: &GridField<T>) -> T {
    let grid = field.grid();
    let b = cube.cell_box(grid);
    let s: T = b.cells(grid).map(|i| field.values()[i]).sum();
    s * grid.cell_volume()
}

/// Canonical cell-box sums of a field.
///
/// Boxes that coincide with an unshifted dyadic cube are answered from a
/// bottom-up pyramid (parent sums are computed from child sums, so nonnegative
/// data gives parent >= child exactly); every other box uses a summed-area
/// table. Any two code paths asking for the same box get the same number.
#[derive(Debug, Clone)]
pub struct CellSums<T> {
    grid: DomainGrid<T>,
    pyramid: Vec<Vec<T>>,
    table: Vec<T>,
}

impl<T: Real> CellSums<T> {
    pub fn new(field: &GridField<T>) -> Self {
        let grid = *field.grid();
        let n = grid.cells_per_axis();
        let levels = grid.levels();
        let mut pyramid = vec![Vec::new(); levels + 1];
        pyramid[levels] = field.values().to_vec();
        for k in (0..levels).rev() {
            let side = 1usize << k;
            let fine = &pyramid[k + 1];
            let mut coarse = vec![T::zero(); side.pow(grid.dim() as u32)];
            if grid.dim() == 1 {
                for (j, c) in coarse.iter_mut().enumerate() {
                    *c = fine[2 * j] + fine[2 * j + 1];
                }
            } else {
                let fs = 2 * side;
                for a in 0..side {
                    for b in 0..side {
                        coarse[a * side + b] = (fine[2 * a * fs + 2 * b]
                            + fine[2 * a * fs + 2 * b + 1])
                            + (fine[(2 * a + 1) * fs + 2 * b] + fine[(2 * a + 1) * fs + 2 * b + 1]);
                    }
                }
            }
            pyramid[k] = coarse;
        }
        let table = if grid.dim() == 1 {
            let mut t = Vec::with_capacity(n + 1);
            t.push(T::zero());
            let mut acc = T::zero();
            for &v in field.values() {
                acc += v;
                t.push(acc);
            }
            t
        } else {
            let w = n + 1;
            let mut t = vec![T::zero(); w * w];
            for i in 0..n {
                let mut row = T::zero();
                for j in 0..n {
                    row += field.values()[i * n + j];
                    t[(i + 1) * w + j + 1] = t[i * w + j + 1] + row;
                }
            }
            t
        };
        Self {
            grid,
            pyramid,
            table,
        }
    }

    pub fn grid(&self) -> &DomainGrid<T> {
        &self.grid
    }

    /// Sum of cell values (no volume factor) over the box.
    pub fn sum(&self, b: &CellBox) -> T {
        if b.is_empty() {
            return T::zero();
        }
        if let Some(v) = self.dyadic_lookup(b) {
            return v;
        }
        if self.grid.dim() == 1 {
            self.table[b.hi[0]] - self.table[b.lo[0]]
        } else {
            let w = self.grid.cells_per_axis() + 1;
            let t = &self.table;
            (t[b.hi[0] * w + b.hi[1]] - t[b.lo[0] * w + b.hi[1]])
                - (t[b.hi[0] * w + b.lo[1]] - t[b.lo[0] * w + b.lo[1]])
        }
    }

    /// Pyramid value of the unshifted dyadic cube at `depth` with cell-block corner `corner`.
    pub fn dyadic(&self, depth: usize, corner: [usize; 2]) -> T {
        let side = 1usize << depth;
        let idx = if self.grid.dim() == 1 {
            corner[0]
        } else {
            corner[0] * side + corner[1]
        };
        self.pyramid[depth][idx]
    }

    fn dyadic_lookup(&self, b: &CellBox) -> Option<T> {
        let n = self.grid.cells_per_axis();
        let len = b.hi[0] - b.lo[0];
        if !len.is_power_of_two() || !b.lo[0].is_multiple_of(len) {
            return None;
        }
        if self.grid.dim() == 2 && (b.hi[1] - b.lo[1] != len || !b.lo[1].is_multiple_of(len)) {
            return None;
        }
        let depth = (n / len).trailing_zeros() as usize;
        Some(self.dyadic(
            depth,
            [
                b.lo[0] / len,
                if self.grid.dim() == 2 {
                    b.lo[1] / len
                } else {
                    0
                },
            ],
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(n: usize) -> DomainGrid<f64> {
        DomainGrid::new(1, 0.5, n).unwrap()
    }

    #[test]
    fn build_domain_examples() {
        let g = build_domain(1, 0.5, 8).unwrap();
        assert_eq!(g.cell_width(), 0.125);
        assert_eq!(g.cell_center(0)[0], -0.5 + 0.0625);
        let g2 = build_domain(2, 1.0, 16).unwrap();
        assert_eq!(g2.n_cells(), 256);
        assert_eq!(g2.cell_volume(), 1.0 / 64.0);
        assert_eq!(build_domain(1, 0.5, 7), Err(VarlexError::NotPowerOfTwo(7)));
        assert_eq!(
            build_domain(3, 0.5, 8),
            Err(VarlexError::UnsupportedDimension(3))
        );
        assert!(build_domain(1, -1.0, 8).is_err());
    }

    #[test]
    fn cell_volume_times_count_is_domain_volume() {
        for &(dim, l, n) in &[(1, 0.5, 8), (2, 1.0, 16), (2, 0.3, 64), (1, 7.25, 1024)] {
            let g = DomainGrid::new(dim, l, n).unwrap();
            let total = g.cell_volume() * g.n_cells() as f64;
            assert!((total - g.domain_volume()).abs() <= 4.0 * f64::EPSILON * g.domain_volume());
        }
    }

    #[test]
    fn dyadic_counts() {
        let g = unit_grid(8);
        let fam = enumerate_cubes(&g, &[Shift::ZERO], 2).unwrap();
        assert_eq!(fam.len(), 7);
        let g2 = DomainGrid::new(2, 0.5, 8).unwrap();
        assert_eq!(dyadic_family(&g2, 2).unwrap().len(), 1 + 4 + 16);
        assert!(enumerate_cubes(&g, &[Shift::ZERO], 4).is_err());
    }

    #[test]
    fn shifted_family_matches_direct_enumeration() {
        // D_{1/3} at depth 0: [1/3 + j, 4/3 + j) meets [0,1) for j = -1, 0.
        // depth 1: 1/2(-1/3 + j + [0,1)) meets [0,1) for j = 0, 1, 2.
        let g = unit_grid(8);
        let fam = enumerate_cubes(&g, &[Shift::ZERO, Shift(1)], 1).unwrap();
        let shifted: Vec<(i32, i64)> = fam
            .iter()
            .filter(|c| c.shift == Shift(1))
            .map(|c| (c.depth, c.corner[0]))
            .collect();
        assert_eq!(shifted, vec![(0, -1), (0, 0), (1, 0), (1, 1), (1, 2)]);
        let unshifted = fam.iter().filter(|c| c.shift.is_zero()).count();
        assert_eq!(unshifted, 3);
        // brute-force oracle from the formula with floating lower corners
        for c in fam.iter().filter(|c| c.shift == Shift(1)) {
            let s = if c.depth % 2 == 0 { 1.0 } else { -1.0 };
            let lo = 2f64.powi(-c.depth) * (s / 3.0 + c.corner[0] as f64);
            let hi = lo + 2f64.powi(-c.depth);
            assert!(lo < 1.0 && hi > 0.0);
            assert!((c.lower_unit::<f64>(0) - lo).abs() < 1e-15);
        }
    }

    #[test]
    fn cell_box_matches_center_membership() {
        let g = DomainGrid::new(2, 1.0, 32).unwrap();
        let fam = enumerate_cubes(&g, &Shift::all(2), 4).unwrap();
        for c in &fam {
            let b = c.cell_box(&g);
            for idx in 0..g.n_cells() {
                let u = g.unit_center(idx);
                let inside = (0..2).all(|a| {
                    let lo: f64 = c.lower_unit(a);
                    lo <= u[a] && u[a] < lo + c.side_unit::<f64>()
                });
                assert_eq!(inside, b.contains_cell(&g, idx), "{c} cell {idx}");
            }
        }
    }

    #[test]
    fn same_depth_disjoint_and_parent_unique() {
        let g = DomainGrid::new(2, 0.5, 16).unwrap();
        let fam = enumerate_cubes(&g, &Shift::all(2), 4).unwrap();
        for shift in Shift::all(2) {
            for depth in 0..=4 {
                let level: Vec<_> = fam
                    .iter()
                    .filter(|c| c.shift == shift && c.depth == depth)
                    .collect();
                let mut seen = vec![0u32; g.n_cells()];
                for c in &level {
                    for i in c.cell_box(&g).cells(&g) {
                        seen[i] += 1;
                    }
                }
                // tiling: every cell covered exactly once
                assert!(seen.iter().all(|&s| s == 1), "shift {shift} depth {depth}");
                if depth > 0 {
                    for c in &level {
                        let p = c.parent();
                        assert!(p.children().contains(c));
                        // geometric containment
                        for a in 0..2 {
                            let (clo, plo): (f64, f64) = (c.lower_unit(a), p.lower_unit(a));
                            assert!(plo <= clo + 1e-15);
                            assert!(
                                clo + c.side_unit::<f64>() <= plo + p.side_unit::<f64>() + 1e-15
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn integrate_examples() {
        let g = unit_grid(8);
        let one = GridField::constant(g, 1.0);
        let half = DyadicCube::new(1, Shift::ZERO, 1, [0, 0]);
        assert_eq!(integrate_over(&half, &one), 0.5);
        let ind = GridField::from_unit_fn(g, |u| if u[0] < 0.25 { 1.0 } else { 0.0 });
        assert_eq!(integrate_over(&DyadicCube::root(1), &ind), 0.25);
    }

    #[test]
    fn ancestors_cover_domain() {
        let g = unit_grid(8);
        let anc = DyadicCube::root(1).parent();
        assert_eq!(anc.depth, -1);
        assert_eq!(anc.cell_box(&g), g.full_box());
        assert_eq!(anc.volume(&g), 2.0);
    }

    #[test]
    fn cell_sums_agree_with_direct() {
        let g = DomainGrid::new(2, 1.0, 16).unwrap();
        let f = GridField::from_fn(g, |x: [f64; 2]| (3.0 * x[0]).sin().abs() + x[1] * x[1]);
        let sums = CellSums::new(&f);
        let fam = enumerate_cubes(&g, &Shift::all(2), 4).unwrap();
        for c in &fam {
            let direct = integrate_over(c, &f);
            let fast = sums.sum(&c.cell_box(&g)) * g.cell_volume();
            assert!((direct - fast).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn csv_export_has_one_row_per_cube() {
        let g = unit_grid(8);
        let fam = dyadic_family(&g, 2).unwrap();
        let csv = fam.to_csv(&g);
        assert_eq!(csv.lines().count(), 8);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,0,0,1"));
    }
}
