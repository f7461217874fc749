//! Matrix weights `W: Ω → S_d`, reducing operators, the two matrix
//! `A_{p(·),q(·)}` constants and the vector operators they control.
//!
//! Everything here is `f64` with `nalgebra` matrices. Weight constants measure
//! cubes by their covered volume (as in [`crate::weights`]); the vector
//! operators use the full cube volume with zero extension (as in
//! [`crate::operators`]). Both agree on unshifted families.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VarlexError};
use crate::exponents::ExponentField;
use crate::grid::{CellBox, CubeFamily, DomainGrid, DyadicCube, GridField};
use crate::varlebesgue::luxemburg_slice;
use crate::weights::{apq_constant, check_consistency, sup_over_cubes, WeightConstantReport};

/// Default per-family budget of `(x, y)` cell pairs for [`matrix_apq_direct`].
pub const MATRIX_PAIR_BUDGET: u128 = 1 << 26;

/// Spectral norm.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.len() == 1 {
        m[(0, 0)].abs()
    } else {
        m.singular_values().max()
    }
}

/// `|‖AB‖ − ‖BA‖|` relative to `‖AB‖`; zero for self-adjoint `A`, `B`.
pub fn commutation_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let ab = op_norm(&(a * b));
    let ba = op_norm(&(b * a));
    (ab - ba).abs() / ab.max(f64::MIN_POSITIVE)
}

/// Symmetric square root of a symmetric positive semidefinite matrix.
fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let s = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixWeightField {
    grid: DomainGrid<f64>,
    d: usize,
    values: Vec<DMatrix<f64>>,
    inverses: Vec<DMatrix<f64>>,
}

impl MatrixWeightField {
    pub fn new(grid: DomainGrid<f64>, d: usize, values: Vec<DMatrix<f64>>) -> Result<Self> {
        if d == 0 {
            return Err(VarlexError::Invalid(
                "matrix dimension must be positive".into(),
            ));
        }
        if values.len() != grid.n_cells() {
            return Err(VarlexError::ShapeMismatch {
                expected: grid.n_cells(),
                got: values.len(),
            });
        }
        let mut inverses = Vec::with_capacity(values.len());
        for (cell, w) in values.iter().enumerate() {
            if w.nrows() != d || w.ncols() != d {
                return Err(VarlexError::ShapeMismatch {
                    expected: d * d,
                    got: w.len(),
                });
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(VarlexError::NonFinite { cell });
            }
            let scale = w.norm();
            if (w - w.transpose()).norm() > 1e-12 * scale {
                return Err(VarlexError::NotSpd { cell });
            }
            let min_eig = w.clone().symmetric_eigen().eigenvalues.min();
            if !(min_eig > 0.0) {
                return Err(VarlexError::NotSpd { cell });
            }
            inverses.push(
                w.clone()
                    .cholesky()
                    .ok_or(VarlexError::NotSpd { cell })?
                    .inverse(),
            );
        }
        Ok(Self {
            grid,
            d,
            values,
            inverses,
        })
    }

    pub fn from_fn(
        grid: DomainGrid<f64>,
        d: usize,
        f: impl Fn([f64; 2]) -> DMatrix<f64>,
    ) -> Result<Self> {
        let values = (0..grid.n_cells())
            .map(|i| f(grid.cell_center(i)))
            .collect();
        Self::new(grid, d, values)
    }

    pub fn constant(grid: DomainGrid<f64>, w: DMatrix<f64>) -> Result<Self> {
        let d = w.nrows();
        Self::new(grid, d, vec![w; grid.n_cells()])
    }

    /// The `d = 1` field of a positive scalar weight.
    pub fn from_scalar(w: &GridField<f64>) -> Result<Self> {
        w.validate_weight()?;
        let values = w
            .values()
            .iter()
            .map(|&v| DMatrix::from_element(1, 1, v))
            .collect();
        Self::new(*w.grid(), 1, values)
    }

    pub fn grid(&self) -> &DomainGrid<f64> {
        &self.grid
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn inverses(&self) -> &[DMatrix<f64>] {
        &self.inverses
    }

    /// `x ↦ ‖W(x)‖`.
    pub fn norm_field(&self) -> GridField<f64> {
        let v = self.values.iter().map(op_norm).collect();
        GridField::new(self.grid, v).expect("grid-sized")
    }

    /// `x ↦ |W(x)e|`.
    pub fn projection_field(&self, e: &DVector<f64>) -> Result<GridField<f64>> {
        self.check_vector(e)?;
        let v = self.values.iter().map(|w| (w * e).norm()).collect();
        GridField::new(self.grid, v)
    }

    fn check_vector(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.d {
            return Err(VarlexError::ShapeMismatch {
                expected: self.d,
                got: v.len(),
            });
        }
        if v.iter().all(|&x| x == 0.0) {
            return Err(VarlexError::ZeroVector);
        }
        Ok(())
    }

    pub fn to_json(&self) -> MatrixWeightJson {
        MatrixWeightJson {
            n: self.grid.dim(),
            half_width: self.grid.half_width(),
            cells_per_axis: self.grid.cells_per_axis(),
            d: self.d,
            values: self
                .values
                .iter()
                .flat_map(|w| w.transpose().iter().copied().collect::<Vec<_>>())
                .collect(),
        }
    }

    pub fn from_json(json: &MatrixWeightJson) -> Result<Self> {
        let grid = DomainGrid::new(json.n, json.half_width, json.cells_per_axis)?;
        let block = json.d * json.d;
        if json.values.len() != block * grid.n_cells() {
            return Err(VarlexError::ShapeMismatch {
                expected: block * grid.n_cells(),
                got: json.values.len(),
            });
        }
        let values = json
            .values
            .chunks(block)
            .map(|c| DMatrix::from_row_slice(json.d, json.d, c))
            .collect();
        Self::new(grid, json.d, values)
    }
}

/// On-disk form of a [`MatrixWeightField`]: row-major `d×d` blocks per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixWeightJson {
    pub n: usize,
    #[serde(rename = "L")]
    pub half_width: f64,
    #[serde(rename = "N")]
    pub cells_per_axis: usize,
    pub d: usize,
    pub values: Vec<f64>,
}

/// A grid-sampled `R^d`-valued function.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: DomainGrid<f64>,
    d: usize,
    values: Vec<DVector<f64>>,
}

impl VectorField {
    pub fn new(grid: DomainGrid<f64>, d: usize, values: Vec<DVector<f64>>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(VarlexError::ShapeMismatch {
                expected: grid.n_cells(),
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| v.len() != d) {
            return Err(VarlexError::ShapeMismatch {
                expected: d,
                got: v.len(),
            });
        }
        Ok(Self { grid, d, values })
    }

    pub fn from_fn(
        grid: DomainGrid<f64>,
        d: usize,
        f: impl Fn([f64; 2]) -> DVector<f64>,
    ) -> Result<Self> {
        let values = (0..grid.n_cells())
            .map(|i| f(grid.cell_center(i)))
            .collect();
        Self::new(grid, d, values)
    }

    pub fn zeros(grid: DomainGrid<f64>, d: usize) -> Self {
        Self {
            grid,
            d,
            values: vec![DVector::zeros(d); grid.n_cells()],
        }
    }

    pub fn grid(&self) -> &DomainGrid<f64> {
        &self.grid
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn magnitude(&self) -> GridField<f64> {
        GridField::new(self.grid, self.values.iter().map(|v| v.norm()).collect())
            .expect("grid-sized")
    }

    /// `x ↦ |W(x)f(x)|`.
    pub fn weighted_magnitude(&self, w: &MatrixWeightField) -> Result<GridField<f64>> {
        check_pair(w, self)?;
        let v = self
            .values
            .iter()
            .zip(&w.values)
            .map(|(f, m)| (m * f).norm())
            .collect();
        GridField::new(self.grid, v)
    }
}

fn check_pair(w: &MatrixWeightField, f: &VectorField) -> Result<()> {
    if !w.grid.same_geometry(&f.grid) {
        return Err(VarlexError::GridMismatch);
    }
    if w.d != f.d {
        return Err(VarlexError::ShapeMismatch {
            expected: w.d,
            got: f.d,
        });
    }
    Ok(())
}

fn check_exponent(w: &MatrixWeightField, r: &ExponentField<f64>) -> Result<()> {
    if !w.grid.same_geometry(r.grid()) {
        return Err(VarlexError::GridMismatch);
    }
    Ok(())
}

/// Which matrix enters the average norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// `r(x, v) = |W(x)v|`, paired with `q(·)`.
    Primal,
    /// `r*(x, v) = |W^{-1}(x)v|`, paired with `p'(·)`.
    Dual,
}

/// Average norm on a block of cells, with `r` the exponent actually applied.
fn block_avg_norm(
    w: &MatrixWeightField,
    r: &ExponentField<f64>,
    side: Side,
    b: &CellBox,
    v: &DVector<f64>,
) -> Result<f64> {
    let grid = &w.grid;
    let mats = match side {
        Side::Primal => &w.values,
        Side::Dual => &w.inverses,
    };
    let (vals, exps): (Vec<f64>, Vec<f64>) = b
        .cells(grid)
        .map(|i| ((&mats[i] * v).norm(), r.values()[i]))
        .unzip();
    let r_q = exps.len() as f64 / exps.iter().map(|e| e.recip()).sum::<f64>();
    let vol = b.len() as f64 * grid.cell_volume();
    Ok(vol.powf(-r_q.recip()) * luxemburg_slice(&vals, &exps, grid.cell_volume())?.norm)
}

fn nonempty_box(w: &MatrixWeightField, cube: &DyadicCube) -> Result<CellBox> {
    let b = cube.cell_box(&w.grid);
    if b.is_empty() {
        return Err(VarlexError::Empty("cube covers no cells"));
    }
    Ok(b)
}

/// `⟨r⟩_{p,Q}(v) = |Q|^{−1/p_Q}‖χ_Q |W v|‖_{p(·)}`.
pub fn avg_norm(
    w: &MatrixWeightField,
    p: &ExponentField<f64>,
    cube: &DyadicCube,
    v: &DVector<f64>,
) -> Result<f64> {
    avg_norm_side(w, p, Side::Primal, cube, v)
}

/// [`avg_norm`] for either side; `r` is the exponent actually applied.
pub fn avg_norm_side(
    w: &MatrixWeightField,
    r: &ExponentField<f64>,
    side: Side,
    cube: &DyadicCube,
    v: &DVector<f64>,
) -> Result<f64> {
    check_exponent(w, r)?;
    w.check_vector(v)?;
    block_avg_norm(w, r, side, &nonempty_box(w, cube)?, v)
}

/// Minimum-volume ellipsoid `{x : xᵀAx ≤ 1}` enclosing `±points`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mvee {
    pub shape: DMatrix<f64>,
    pub iterations: usize,
    /// `max pᵀX⁻¹p / d − 1` at exit.
    pub gap: f64,
}

/// Minimum-volume symmetric ellipsoid of a point set.
///
/// A log-barrier Newton method on `−log det A` subject to `pᵀAp ≤ 1` gives a
/// warm start; its dual weights then seed Khachiyan's scheme with
/// Todd–Yıldırım away steps, which runs until every point satisfies
/// `pᵀX⁻¹p ≤ d(1 + tol)` for the design matrix `X = Σ uᵢ pᵢpᵢᵀ`. The
/// returned shape is `X⁻¹/d`. `max_iter` bounds the combined iteration count.
pub fn mvee_symmetric(points: &[DVector<f64>], tol: f64, max_iter: usize) -> Result<Mvee> {
    let first = points.first().ok_or(VarlexError::Empty("point set"))?;
    let d = first.len();
    // whiten so the barrier starts well conditioned; the problem is affine invariant
    let mut x0 = DMatrix::zeros(d, d);
    for p in points {
        x0.ger(1.0 / points.len() as f64, p, p, 1.0);
    }
    let x0 = x0
        .cholesky()
        .ok_or_else(|| VarlexError::Invalid("sample points do not span the space".into()))?;
    let l_inv = x0
        .l()
        .try_inverse()
        .expect("triangular with positive diagonal");
    let white: Vec<DVector<f64>> = points.iter().map(|p| &l_inv * p).collect();
    let (u, used) = barrier_weights(&white, tol, max_iter);
    let (xinv, iterations, gap) = khachiyan(&white, u, tol, max_iter.saturating_sub(used))?;
    // X_white = L⁻¹ X L⁻ᵀ, so X⁻¹ = L⁻ᵀ X_white⁻¹ L⁻¹
    let shape = l_inv.transpose() * xinv * &l_inv / d as f64;
    Ok(Mvee {
        shape,
        iterations: used + iterations,
        gap,
    })
}

/// Central-path dual weights `μ/sᵢ` once their design gap is below `tol/2`
/// (or `μ` reaches a floor), with the Newton iteration count. Falls back to
/// uniform weights if the path stalls.
fn barrier_weights(points: &[DVector<f64>], tol: f64, max_iter: usize) -> (Vec<f64>, usize) {
    let d = points[0].len();
    let n = points.len();
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|k| (k..d).map(move |l| (k, l))).collect();
    let m = pairs.len();
    let to_matrix = |a: &DVector<f64>| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(d, d);
        for (j, &(k, l)) in pairs.iter().enumerate() {
            out[(k, l)] += a[j];
            if k != l {
                out[(l, k)] += a[j];
            }
        }
        out
    };
    // ⟨ppᵀ, E_j⟩ for the symmetric basis E_j
    let feats: Vec<DVector<f64>> = points
        .iter()
        .map(|p| {
            DVector::from_iterator(
                m,
                pairs.iter().map(|&(k, l)| {
                    if k == l {
                        p[k] * p[k]
                    } else {
                        2.0 * p[k] * p[l]
                    }
                }),
            )
        })
        .collect();
    let r2 = points.iter().map(|p| p.norm_squared()).fold(0.0, f64::max);
    let mut a = DVector::from_iterator(
        m,
        pairs
            .iter()
            .map(|&(k, l)| if k == l { 0.5 / r2 } else { 0.0 }),
    );
    let phi = |a: &DVector<f64>, mu: f64| -> Option<f64> {
        let chol = to_matrix(a).cholesky()?;
        let logdet: f64 = chol.l().diagonal().iter().map(|v: &f64| 2.0 * v.ln()).sum();
        let mut bar = 0.0;
        for f in &feats {
            let s = 1.0 - f.dot(a);
            if !(s > 0.0) {
                return None;
            }
            bar += s.ln();
        }
        Some(-logdet - mu * bar)
    };
    let mut mu = 1.0;
    let mut used = 0;
    let mut target = 0.25 * d as f64 * tol / n as f64;
    let floor = target * 1e-4;
    loop {
        loop {
            if used >= max_iter {
                return (vec![1.0 / n as f64; n], used);
            }
            used += 1;
            let ainv = to_matrix(&a)
                .try_inverse()
                .expect("iterate stays positive definite");
            let basis: Vec<DMatrix<f64>> = (0..m)
                .map(|j| {
                    &ainv * to_matrix(&DVector::from_fn(m, |i, _| f64::from(u8::from(i == j))))
                })
                .collect();
            let mut grad = DVector::from_fn(m, |j, _| -basis[j].trace());
            let mut hess = DMatrix::from_fn(m, m, |j, k| (&basis[j] * &basis[k]).trace());
            for f in &feats {
                let s = 1.0 - f.dot(&a);
                grad.axpy(mu / s, f, 1.0);
                hess.ger(mu / (s * s), f, f, 1.0);
            }
            let Some(step) = hess.cholesky().map(|c| -c.solve(&grad)) else {
                return (vec![1.0 / n as f64; n], used);
            };
            let dec = -grad.dot(&step);
            if dec <= 1e-14 {
                break;
            }
            let f0 = phi(&a, mu).expect("iterate is feasible");
            let mut t = 1.0;
            loop {
                let cand = &a + &step * t;
                if phi(&cand, mu).is_some_and(|f1| f1 <= f0 - 0.25 * t * dec) {
                    a = cand;
                    break;
                }
                t *= 0.5;
                if t < 1e-12 {
                    break;
                }
            }
            if t < 1e-12 {
                break;
            }
        }
        if mu <= target {
            // off-centre iterates leave a larger gap than nμ/d; push μ further
            let u = dual_weights(&feats, &a, mu);
            if design_gap(points, &u) <= 0.5 * tol || mu <= floor {
                return (u, used);
            }
            target *= 0.1;
        }
        mu = (mu * 0.2).max(target);
    }
}

fn dual_weights(feats: &[DVector<f64>], a: &DVector<f64>, mu: f64) -> Vec<f64> {
    let u: Vec<f64> = feats.iter().map(|f| mu / (1.0 - f.dot(a))).collect();
    let total: f64 = u.iter().sum();
    u.into_iter().map(|v| v / total).collect()
}

/// `max pᵀX⁻¹p / d − 1` for the design `X = Σ uᵢpᵢpᵢᵀ`.
fn design_gap(points: &[DVector<f64>], u: &[f64]) -> f64 {
    let d = points[0].len();
    let mut x = DMatrix::zeros(d, d);
    for (p, &ui) in points.iter().zip(u) {
        x.ger(ui, p, p, 1.0);
    }
    let Some(chol) = x.cholesky() else {
        return f64::INFINITY;
    };
    let xinv = chol.inverse();
    let gmax = points.iter().map(|p| p.dot(&(&xinv * p))).fold(0.0, f64::max);
    gmax / d as f64 - 1.0
}

/// Returns `X⁻¹`, the iteration count and the final gap.
fn khachiyan(
    points: &[DVector<f64>],
    mut u: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(DMatrix<f64>, usize, f64)> {
    let d = points[0].len();
    let df = d as f64;
    for it in 0..=max_iter {
        let mut x = DMatrix::zeros(d, d);
        for (p, &ui) in points.iter().zip(&u) {
            if ui > 0.0 {
                x.ger(ui, p, p, 1.0);
            }
        }
        let xinv = x
            .cholesky()
            .ok_or_else(|| VarlexError::Invalid("sample points do not span the space".into()))?
            .inverse();
        let g: Vec<f64> = points.iter().map(|p| p.dot(&(&xinv * p))).collect();
        let (jp, gmax) = g
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |a, (i, v)| if v > a.1 { (i, v) } else { a },
            );
        let gap = gmax / df - 1.0;
        if gap <= tol {
            return Ok((xinv, it, gap));
        }
        if it == max_iter {
            break;
        }
        let (jm, gmin) = g
            .iter()
            .copied()
            .enumerate()
            .filter(|&(i, _)| u[i] > 0.0)
            .fold(
                (0, f64::INFINITY),
                |a, (i, v)| if v < a.1 { (i, v) } else { a },
            );
        if gap >= 1.0 - gmin / df {
            let beta = (gmax - df) / (df * (gmax - 1.0));
            u.iter_mut().for_each(|ui| *ui *= 1.0 - beta);
            u[jp] += beta;
        } else {
            let drop = u[jm] / (1.0 - u[jm]);
            let beta = if gmin > 1.0 {
                ((df - gmin) / (df * (gmin - 1.0))).min(drop)
            } else {
                drop
            };
            u.iter_mut().for_each(|ui| *ui *= 1.0 + beta);
            u[jm] = if beta == drop {
                0.0
            } else {
                (u[jm] - beta).max(0.0)
            };
        }
    }
    Err(VarlexError::MveeNoConvergence(max_iter))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducingOptions {
    /// Sampled boundary directions; `None` means `64·d`.
    pub directions: Option<usize>,
    pub holdout: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Relative allowance on `√d(1 + tol)` for held-out directions that the
    /// sampled ellipsoid does not see.
    pub slack: f64,
}

impl Default for ReducingOptions {
    fn default() -> Self {
        Self {
            directions: None,
            holdout: 256,
            tol: 1e-6,
            max_iter: 10_000,
            slack: 0.01,
        }
    }
}

/// Unit directions covering the half-sphere. In one dimension there is only one.
fn directions(d: usize, count: usize, seed: u64, offset: f64) -> Vec<DVector<f64>> {
    match d {
        1 => vec![DVector::from_element(1, 1.0)],
        2 => (0..count)
            .map(|k| {
                let t = (k as f64 + offset) * std::f64::consts::PI / count as f64;
                DVector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out: Vec<DVector<f64>> = (0..d)
                .map(|i| DVector::from_fn(d, |j, _| f64::from(u8::from(i == j))))
                .collect();
            while out.len() < count.max(d) {
                let v = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
                let r = v.norm();
                if r > 1e-3 && r <= 1.0 {
                    out.push(v / r);
                }
            }
            out
        }
    }
}

/// Directions whose boundary points are fed to the MVEE.
pub fn fit_directions(d: usize, count: usize) -> Vec<DVector<f64>> {
    directions(d, count, 0x5eed_0001, 0.0)
}

/// Directions used only to set the lower scale and certify the sandwich.
pub fn held_out_directions(d: usize, count: usize) -> Vec<DVector<f64>> {
    directions(d, count.max(1), 0x5eed_0002, 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducingOperator {
    pub cube: DyadicCube,
    pub side: Side,
    #[serde(serialize_with = "ser_matrix")]
    pub matrix: DMatrix<f64>,
    /// Largest `|Mv| / ⟨r⟩(v)` over all probes; the smallest is 1.
    pub sandwich: f64,
    /// Factor applied to the MVEE norm so the lower bound holds on every probe.
    pub lower_scale: f64,
    pub mvee_iterations: usize,
}

fn ser_matrix<S: serde::Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

impl ReducingOperator {
    pub fn apply_norm(&self, v: &DVector<f64>) -> f64 {
        (&self.matrix * v).norm()
    }
}

/// Ellipsoidal approximation `|Mv|` of `⟨r⟩_{r,Q}` for the given side; `r` is
/// the exponent actually applied (`q` for the primal side, `p'` for the dual).
///
/// The MVEE of the sampled unit-ball boundary is rescaled so that
/// `⟨r⟩(v) ≤ |Mv|` on every sampled and held-out direction, and the largest
/// ratio must stay within `√d(1 + tol)(1 + slack)`.
pub fn reducing_operator(
    w: &MatrixWeightField,
    r: &ExponentField<f64>,
    side: Side,
    cube: &DyadicCube,
    opts: &ReducingOptions,
) -> Result<ReducingOperator> {
    check_exponent(w, r)?;
    let b = nonempty_box(w, cube)?;
    let d = w.d;
    let count = opts.directions.unwrap_or(64 * d).max(d);
    let boundary = |dirs: Vec<DVector<f64>>| -> Result<Vec<DVector<f64>>> {
        dirs.into_iter()
            .map(|u| {
                let a = block_avg_norm(w, r, side, &b, &u)?;
                Ok(u / a)
            })
            .collect()
    };
    let samples = boundary(fit_directions(d, count))?;
    let held = boundary(held_out_directions(d, opts.holdout))?;
    let mvee = mvee_symmetric(&samples, opts.tol, opts.max_iter)?;
    let base = sym_sqrt(&mvee.shape);
    // every probe point has ⟨r⟩ = 1, so |base·p| is the ratio to ⟨r⟩
    let ratios: Vec<f64> = samples
        .iter()
        .chain(&held)
        .map(|p| (&base * p).norm())
        .collect();
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    let lower_scale = lo.recip();
    let sandwich = hi * lower_scale;
    let allowed = (d as f64).sqrt() * (1.0 + opts.tol) * (1.0 + opts.slack);
    if !(sandwich <= allowed) {
        return Err(VarlexError::CertificationFailed {
            factor: sandwich,
            allowed,
            lower: 1.0,
        });
    }
    Ok(ReducingOperator {
        cube: *cube,
        side,
        matrix: base * lower_scale,
        sandwich,
        lower_scale,
        mvee_iterations: mvee.iterations,
    })
}

/// `sup_Q |Q|^{α/n−1}‖ ‖ ‖W^{−1}(y)W(x)‖χ_Q(y)‖_{L^{p'}_y} χ_Q(x)‖_{L^q_x}`.
pub fn matrix_apq_direct(
    w: &MatrixWeightField,
    p: &ExponentField<f64>,
    q: &ExponentField<f64>,
    alpha: f64,
    cubes: &CubeFamily,
    budget: Option<u128>,
) -> Result<WeightConstantReport<f64>> {
    check_exponent(w, p)?;
    check_exponent(w, q)?;
    check_consistency(std::slice::from_ref(p), q, alpha)?;
    let grid = w.grid;
    let budget = budget.unwrap_or(MATRIX_PAIR_BUDGET);
    let requested: u128 = cubes
        .iter()
        .map(|c| (c.cell_box(&grid).len() as u128).pow(2))
        .sum();
    if requested > budget {
        return Err(VarlexError::CostBudget { requested, budget });
    }
    let pc = p.conjugate()?;
    let h = grid.cell_volume();
    let power = alpha / grid.dim() as f64 - 1.0;
    sup_over_cubes(&grid, cubes, |_, b| {
        let cells: Vec<usize> = b.cells(&grid).collect();
        let p_exps: Vec<f64> = cells.iter().map(|&i| pc.values()[i]).collect();
        let inner: Vec<f64> = cells
            .par_iter()
            .map(|&x| {
                let row: Vec<f64> = cells
                    .iter()
                    .map(|&y| op_norm(&(&w.inverses[y] * &w.values[x])))
                    .collect();
                Ok(luxemburg_slice(&row, &p_exps, h)?.norm)
            })
            .collect::<Result<_>>()?;
        let q_exps: Vec<f64> = cells.iter().map(|&i| q.values()[i]).collect();
        let outer = luxemburg_slice(&inner, &q_exps, h)?.norm;
        Ok((cells.len() as f64 * h).powf(power) * outer)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedApqReport {
    /// `sup_Q ‖W_Q^{q} W̄_Q^{p'}‖`.
    pub report: WeightConstantReport<f64>,
    /// Largest `|‖VW‖ − ‖WV‖| / ‖VW‖` over the reducing-operator pairs.
    pub commutation_gap: f64,
    pub max_sandwich: f64,
}

pub fn matrix_apq_reduced(
    w: &MatrixWeightField,
    p: &ExponentField<f64>,
    q: &ExponentField<f64>,
    alpha: f64,
    cubes: &CubeFamily,
    opts: &ReducingOptions,
) -> Result<ReducedApqReport> {
    check_exponent(w, p)?;
    check_exponent(w, q)?;
    check_consistency(std::slice::from_ref(p), q, alpha)?;
    let pc = p.conjugate()?;
    let extra = std::sync::Mutex::new((0.0f64, 1.0f64));
    let report = sup_over_cubes(&w.grid, cubes, |c, _| {
        let wq = reducing_operator(w, q, Side::Primal, c, opts)?;
        let wp = reducing_operator(w, &pc, Side::Dual, c, opts)?;
        let gap = commutation_gap(&wq.matrix, &wp.matrix);
        let mut e = extra.lock().expect("poisoned");
        e.0 = e.0.max(gap);
        e.1 = e.1.max(wq.sandwich).max(wp.sandwich);
        Ok(op_norm(&(&wq.matrix * &wp.matrix)))
    })?;
    let (commutation_gap, max_sandwich) = extra.into_inner().expect("poisoned");
    Ok(ReducedApqReport {
        report,
        commutation_gap,
        max_sandwich,
    })
}

/// `(|Q|^{α/n−1}∫_Q f)χ_Q` with the full cube volume.
pub fn vector_average(f: &VectorField, alpha: f64, cube: &DyadicCube) -> Result<VectorField> {
    let grid = f.grid;
    let b = cube.cell_box(&grid);
    let vol = cube.volume(&grid);
    let mut sum = DVector::zeros(f.d);
    for i in b.cells(&grid) {
        sum += &f.values[i];
    }
    let avg = sum * (grid.cell_volume() * vol.powf(alpha / grid.dim() as f64 - 1.0));
    let mut out = VectorField::zeros(grid, f.d);
    for i in b.cells(&grid) {
        out.values[i] = avg.clone();
    }
    Ok(out)
}

/// `ℳ_{α,W}f(x) = sup_{Q∋x} |Q|^{α/n−1}∫_Q |W(x)W^{−1}(y)f(y)| dy`.
pub fn christ_goldberg(
    f: &VectorField,
    w: &MatrixWeightField,
    alpha: f64,
    cubes: &CubeFamily,
) -> Result<GridField<f64>> {
    check_pair(w, f)?;
    if cubes.is_empty() {
        return Err(VarlexError::Empty("cube family"));
    }
    let grid = w.grid;
    let h = grid.cell_volume();
    let g: Vec<DVector<f64>> = f
        .values
        .iter()
        .zip(&w.inverses)
        .map(|(v, m)| m * v)
        .collect();
    let power = alpha / grid.dim() as f64 - 1.0;
    let per_cube: Vec<Vec<(usize, f64)>> = cubes
        .cubes
        .par_iter()
        .map(|c| {
            let b = c.cell_box(&grid);
            let scale = c.volume(&grid).powf(power) * h;
            let cells: Vec<usize> = b.cells(&grid).collect();
            cells
                .iter()
                .map(|&x| {
                    let s: f64 = cells.iter().map(|&y| (&w.values[x] * &g[y]).norm()).sum();
                    (x, scale * s)
                })
                .collect()
        })
        .collect();
    let mut out = vec![0.0; grid.n_cells()];
    for (x, v) in per_cube.into_iter().flatten() {
        if v > out[x] {
            out[x] = v;
        }
    }
    GridField::new(grid, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragingRatio {
    /// `‖ |W 𝒜_{α,Q} f| ‖_{q(·)}`.
    pub lhs: f64,
    /// `‖ |W f| ‖_{p(·)}`.
    pub rhs: f64,
    pub ratio: f64,
}

/// One probe of the operator norm of `𝒜_{α,Q}: L^p(W) → L^q(W)`.
pub fn averaging_ratio(
    w: &MatrixWeightField,
    p: &ExponentField<f64>,
    q: &ExponentField<f64>,
    alpha: f64,
    cube: &DyadicCube,
    f: &VectorField,
) -> Result<AveragingRatio> {
    check_pair(w, f)?;
    let af = vector_average(f, alpha, cube)?;
    let lhs = crate::varlebesgue::luxemburg_norm(&af.weighted_magnitude(w)?, q)?.norm;
    let rhs = crate::varlebesgue::luxemburg_norm(&f.weighted_magnitude(w)?, p)?.norm;
    if !(rhs > 0.0) {
        return Err(VarlexError::Invalid("probe has zero weighted norm".into()));
    }
    Ok(AveragingRatio {
        lhs,
        rhs,
        ratio: lhs / rhs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionReport {
    /// `[|We|]_{A_{p,q}}`.
    pub projection: WeightConstantReport<f64>,
    /// `[‖W‖]_{A_{p,q}}`.
    pub norm: WeightConstantReport<f64>,
    /// `[|We_i|]_{A_{p,q}}` for the standard basis.
    pub basis: Vec<f64>,
    /// `[Σ|We_i|]_{A_{p,q}}`.
    pub basis_sum: f64,
    /// `[W]_{𝔸_{p,q}}` by the direct formula.
    pub matrix: f64,
    /// `[‖W‖]_A / [W]_𝔸`.
    pub c_d: f64,
}

impl ProjectionReport {
    /// `[Σ|We_i|] ≤ Σ[|We_i|]` within relative `tol`.
    pub fn triangle_holds(&self, tol: f64) -> bool {
        self.basis_sum <= self.basis.iter().sum::<f64>() * (1.0 + tol)
    }
}

pub fn scalar_projections(
    w: &MatrixWeightField,
    e: &DVector<f64>,
    p: &ExponentField<f64>,
    q: &ExponentField<f64>,
    alpha: f64,
    cubes: &CubeFamily,
) -> Result<ProjectionReport> {
    if (e.norm() - 1.0).abs() > 1e-12 {
        return Err(VarlexError::Invalid(format!(
            "projection vector must be a unit vector, |e| = {}",
            e.norm()
        )));
    }
    let projection = apq_constant(&w.projection_field(e)?, p, q, alpha, cubes)?;
    let norm = apq_constant(&w.norm_field(), p, q, alpha, cubes)?;
    let mut basis = Vec::with_capacity(w.d);
    let mut sum = GridField::constant(w.grid, 0.0);
    for i in 0..w.d {
        let ei = DVector::from_fn(w.d, |j, _| f64::from(u8::from(i == j)));
        let field = w.projection_field(&ei)?;
        basis.push(apq_constant(&field, p, q, alpha, cubes)?.constant);
        sum = sum.zip_map(&field, |a, b| a + b)?;
    }
    let basis_sum = apq_constant(&sum, p, q, alpha, cubes)?.constant;
    let matrix = matrix_apq_direct(w, p, q, alpha, cubes, None)?.constant;
    Ok(ProjectionReport {
        c_d: norm.constant / matrix,
        projection,
        norm,
        basis,
        basis_sum,
        matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::dyadic_family;

    fn rot(t: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()])
    }

    fn random_field(grid: DomainGrid<f64>) -> MatrixWeightField {
        MatrixWeightField::from_fn(grid, 2, |x: [f64; 2]| {
            let u = rot(1.3 * x[0] + 0.4);
            let dg = DMatrix::from_diagonal(&DVector::from_vec(vec![
                (0.6 * x[0]).exp(),
                1.0 + 0.5 * (2.0 * x[0]).sin().abs(),
            ]));
            &u * dg * u.transpose()
        })
        .unwrap()
    }

    #[test]
    fn validation_rejects_bad_matrices() {
        let g = DomainGrid::new(1, 1.0, 4).unwrap();
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            MatrixWeightField::constant(g, asym),
            Err(VarlexError::NotSpd { .. })
        ));
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            MatrixWeightField::constant(g, indef),
            Err(VarlexError::NotSpd { .. })
        ));
        let w = random_field(g);
        let back = MatrixWeightField::from_json(&w.to_json()).unwrap();
        assert_eq!(back.values(), w.values());
    }

    #[test]
    fn avg_norm_examples() {
        let g = DomainGrid::new(2, 1.0, 8).unwrap();
        let p = ExponentField::from_fn(g, |x: [f64; 2]| 2.0 + 0.5 * x[0]).unwrap();
        let q = dyadic_family(&g, 2).unwrap().cubes[3];
        let id = MatrixWeightField::constant(g, DMatrix::identity(2, 2)).unwrap();
        let v = DVector::from_vec(vec![3.0, -4.0]);
        assert!((avg_norm(&id, &p, &q, &v).unwrap() - 5.0).abs() < 1e-9);
        let dg = MatrixWeightField::constant(
            g,
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])),
        )
        .unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert!((avg_norm(&dg, &p, &q, &e1).unwrap() - 2.0).abs() < 1e-9);
        assert!(matches!(
            avg_norm(&dg, &p, &q, &DVector::zeros(2)),
            Err(VarlexError::ZeroVector)
        ));
    }

    #[test]
    fn mvee_of_ellipse_points_recovers_it() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let l = a.clone().cholesky().unwrap().l();
        // points x with xᵀAx = 1
        let pts: Vec<DVector<f64>> = directions(2, 128, 0, 0.0)
            .into_iter()
            .map(|u| l.transpose().clone().try_inverse().unwrap() * u)
            .collect();
        let m = mvee_symmetric(&pts, 1e-9, 10_000).unwrap();
        assert!((m.shape - a).norm() < 1e-6);
    }

    #[test]
    fn mvee_converges_on_random_anisotropic_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..60 {
            let d = 2 + trial % 3;
            let stretch = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-3.0..3.0))
                + DMatrix::identity(d, d) * 0.05;
            let pts: Vec<DVector<f64>> = directions(d, 64 * d, trial as u64, 0.0)
                .into_iter()
                .map(|u| &stretch * u * rng.gen_range(0.5..1.0))
                .collect();
            let m = mvee_symmetric(&pts, 1e-6, 10_000).unwrap();
            for p in &pts {
                assert!(p.dot(&(&m.shape * p)) <= 1.0 + 1e-6);
            }
        }
    }

    #[test]
    fn reducing_operator_identity_and_diagonal() {
        let g = DomainGrid::new(1, 1.0, 16).unwrap();
        let p = ExponentField::constant(g, 3.0).unwrap();
        let q = DyadicCube::root(1);
        let opts = ReducingOptions::default();
        let id = MatrixWeightField::constant(g, DMatrix::identity(2, 2)).unwrap();
        let r = reducing_operator(&id, &p, Side::Primal, &q, &opts).unwrap();
        assert!(
            (&r.matrix - DMatrix::<f64>::identity(2, 2)).amax() < 1e-6,
            "{}",
            r.matrix
        );
        let dm = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0]));
        let dg = MatrixWeightField::constant(g, dm.clone()).unwrap();
        let r = reducing_operator(&dg, &p, Side::Primal, &q, &opts).unwrap();
        assert!((&r.matrix - &dm).amax() < 1e-5, "{}", r.matrix);
        let r = reducing_operator(&dg, &p, Side::Dual, &q, &opts).unwrap();
        assert!((&r.matrix - dm.try_inverse().unwrap()).amax() < 1e-6);
    }

    #[test]
    fn reducing_operator_sandwich_on_random_field() {
        let g = DomainGrid::new(1, 1.0, 32).unwrap();
        let p = ExponentField::from_fn(g, |x: [f64; 2]| 2.5 + 0.5 * x[0]).unwrap();
        let w = random_field(g);
        let opts = ReducingOptions::default();
        for c in dyadic_family(&g, 2).unwrap().iter() {
            let r = reducing_operator(&w, &p, Side::Primal, c, &opts).unwrap();
            assert!(r.sandwich >= 1.0 && r.sandwich <= 2f64.sqrt() * 1.01);
            for k in 0..50 {
                let t = 0.123 + k as f64 * 0.37;
                let v = DVector::from_vec(vec![t.cos(), t.sin()]);
                let avg = avg_norm(&w, &p, c, &v).unwrap();
                let mv = r.apply_norm(&v);
                assert!(avg <= mv * (1.0 + 1e-6) && mv <= r.sandwich * avg * (1.0 + 1e-3));
            }
        }
    }

    #[test]
    fn reducing_operator_in_four_dimensions() {
        let g = DomainGrid::new(1, 1.0, 16).unwrap();
        let p = ExponentField::constant(g, 2.0).unwrap();
        let w = MatrixWeightField::from_fn(g, 4, |x: [f64; 2]| {
            let b = DMatrix::from_fn(4, 4, |i, j| ((i * 4 + j) as f64 * 0.7 + x[0]).sin());
            &b * b.transpose() + DMatrix::identity(4, 4) * 0.3
        })
        .unwrap();
        let r = reducing_operator(
            &w,
            &p,
            Side::Primal,
            &DyadicCube::root(1),
            &ReducingOptions::default(),
        )
        .unwrap();
        assert!(
            r.sandwich <= 2.0 * 1.01 && r.mvee_iterations < 10_000,
            "{r:?}"
        );
    }

    #[test]
    fn scalar_collapse() {
        let g = DomainGrid::new(1, 1.0, 32).unwrap();
        let wf = GridField::from_fn(g, |x: [f64; 2]| {
            (1.0 + x[0] * x[0]) * (0.5 + x[0].abs()).powf(0.3)
        });
        let w = MatrixWeightField::from_scalar(&wf).unwrap();
        let p = ExponentField::from_fn(g, |x: [f64; 2]| 2.0 + 0.4 * x[0]).unwrap();
        let alpha = 0.25;
        let q = crate::exponents::derive_q(&p, alpha, 1, 1).unwrap();
        let fam = dyadic_family(&g, 5).unwrap();
        let scalar = apq_constant(&wf, &p, &q, alpha, &fam).unwrap().constant;
        let direct = matrix_apq_direct(&w, &p, &q, alpha, &fam, None)
            .unwrap()
            .constant;
        assert!((direct - scalar).abs() <= 1e-9 * scalar);
        let reduced =
            matrix_apq_reduced(&w, &p, &q, alpha, &fam, &ReducingOptions::default()).unwrap();
        assert!((reduced.report.constant - scalar).abs() <= 1e-6 * scalar);
        let c = fam.cubes[4];
        let r = reducing_operator(&w, &q, Side::Primal, &c, &ReducingOptions::default()).unwrap();
        let one = DVector::from_element(1, 1.0);
        assert!((r.matrix[(0, 0)] - avg_norm(&w, &q, &c, &one).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn identity_and_unitary_invariance() {
        let g = DomainGrid::new(1, 1.0, 16).unwrap();
        let p = ExponentField::constant(g, 2.0).unwrap();
        let alpha = 0.25;
        let q = crate::exponents::derive_q(&p, alpha, 1, 1).unwrap();
        let fam = dyadic_family(&g, 4).unwrap();
        let id = MatrixWeightField::constant(g, DMatrix::identity(2, 2)).unwrap();
        let c = matrix_apq_direct(&id, &p, &q, alpha, &fam, None)
            .unwrap()
            .constant;
        assert!((c - 1.0).abs() < 1e-9);
        let r = matrix_apq_reduced(&id, &p, &q, alpha, &fam, &ReducingOptions::default()).unwrap();
        assert!((r.report.constant - 1.0).abs() < 1e-5);
        // x-dependent diagonal versus a fixed rotation of it
        let diag = |x: [f64; 2]| {
            DMatrix::from_diagonal(&DVector::from_vec(vec![(x[0]).exp(), 1.0 + x[0] * x[0]]))
        };
        let u = rot(0.7);
        let d1 = MatrixWeightField::from_fn(g, 2, diag).unwrap();
        let d2 = MatrixWeightField::from_fn(g, 2, |x| &u * diag(x) * u.transpose()).unwrap();
        let a = matrix_apq_direct(&d1, &p, &q, alpha, &fam, None)
            .unwrap()
            .constant;
        let b = matrix_apq_direct(&d2, &p, &q, alpha, &fam, None)
            .unwrap()
            .constant;
        assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn direct_cost_guard() {
        let g = DomainGrid::new(1, 1.0, 16).unwrap();
        let p = ExponentField::constant(g, 2.0).unwrap();
        let w = MatrixWeightField::constant(g, DMatrix::identity(2, 2)).unwrap();
        let fam = dyadic_family(&g, 4).unwrap();
        let err = matrix_apq_direct(&w, &p, &p, 0.0, &fam, Some(10)).unwrap_err();
        assert!(matches!(err, VarlexError::CostBudget { .. }));
    }

    #[test]
    fn christ_goldberg_reductions() {
        let g = DomainGrid::new(1, 1.0, 16).unwrap();
        let fam = dyadic_family(&g, 4).unwrap();
        let alpha = 0.3;
        let f = VectorField::from_fn(g, 2, |x| DVector::from_vec(vec![x[0].sin(), 1.0 - x[0]]))
            .unwrap();
        let id = MatrixWeightField::constant(g, DMatrix::identity(2, 2)).unwrap();
        let cg = christ_goldberg(&f, &id, alpha, &fam).unwrap();
        let m = crate::operators::fractional_maximal(&[f.magnitude()], alpha, &fam)
            .unwrap()
            .field;
        for (a, b) in cg.values().iter().zip(m.values()) {
            assert!((a - b).abs() <= 1e-12 * b.max(1.0));
        }
        // d = 1 against a direct scalar loop
        let wf = GridField::from_fn(g, |x: [f64; 2]| 1.0 + x[0] * x[0]);
        let w = MatrixWeightField::from_scalar(&wf).unwrap();
        let fs =
            VectorField::from_fn(g, 1, |x| DVector::from_element(1, x[0].cos() - 0.4)).unwrap();
        let cg = christ_goldberg(&fs, &w, alpha, &fam).unwrap();
        let h = g.cell_volume();
        for x in 0..16 {
            let mut best: f64 = 0.0;
            for c in fam.iter() {
                let b = c.cell_box(&g);
                if !b.contains_cell(&g, x) {
                    continue;
                }
                let s: f64 = b
                    .cells(&g)
                    .map(|y| wf.values()[x] / wf.values()[y] * fs.values()[y][0].abs())
                    .sum();
                best = best.max(c.volume(&g).powf(alpha - 1.0) * h * s);
            }
            assert!((cg.values()[x] - best).abs() <= 1e-12 * best);
        }
        // pointwise domination of each single-cube average
        let wr = random_field(g);
        let cg = christ_goldberg(&f, &wr, alpha, &fam).unwrap();
        let winv_f = VectorField::new(
            g,
            2,
            f.values()
                .iter()
                .zip(wr.inverses())
                .map(|(v, m)| m * v)
                .collect(),
        )
        .unwrap();
        for c in fam.iter() {
            let a = vector_average(&winv_f, alpha, c)
                .unwrap()
                .weighted_magnitude(&wr)
                .unwrap();
            for (x, y) in a.values().iter().zip(cg.values()) {
                assert!(*x <= y * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn vector_average_constant_and_linear() {
        let g = DomainGrid::new(2, 1.0, 8).unwrap();
        let c = dyadic_family(&g, 1).unwrap().cubes[2];
        let alpha = 0.5;
        let cv = DVector::from_vec(vec![1.0, -2.0]);
        let f = VectorField::from_fn(g, 2, |_| cv.clone()).unwrap();
        let a = vector_average(&f, alpha, &c).unwrap();
        let expect = c.volume(&g).powf(alpha / 2.0);
        let b = c.cell_box(&g);
        for i in 0..g.n_cells() {
            let want = if b.contains_cell(&g, i) {
                &cv * expect
            } else {
                DVector::zeros(2)
            };
            assert!((&a.values()[i] - want).amax() < 1e-12);
        }
    }

    #[test]
    fn averaging_operator_below_four_times_constant() {
        let g = DomainGrid::new(1, 1.0, 16).unwrap();
        let w = random_field(g);
        let p = ExponentField::from_fn(g, |x: [f64; 2]| 2.0 + 0.3 * x[0]).unwrap();
        let alpha = 0.2;
        let q = crate::exponents::derive_q(&p, alpha, 1, 1).unwrap();
        let fam = dyadic_family(&g, 4).unwrap();
        let constant = matrix_apq_direct(&w, &p, &q, alpha, &fam, None)
            .unwrap()
            .constant;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for c in fam.iter().take(7) {
            let b = c.cell_box(&g);
            for _ in 0..5 {
                let vals = (0..16)
                    .map(|i| {
                        if b.contains_cell(&g, i) {
                            DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0))
                        } else {
                            DVector::zeros(2)
                        }
                    })
                    .collect();
                let f = VectorField::new(g, 2, vals).unwrap();
                let r = averaging_ratio(&w, &p, &q, alpha, c, &f).unwrap();
                assert!(r.ratio <= 4.0 * constant);
            }
        }
    }

    #[test]
    fn projections() {
        let g = DomainGrid::new(1, 1.0, 16).unwrap();
        let p = ExponentField::constant(g, 2.0).unwrap();
        let alpha = 0.25;
        let q = crate::exponents::derive_q(&p, alpha, 1, 1).unwrap();
        let fam = dyadic_family(&g, 4).unwrap();
        let dm = MatrixWeightField::from_fn(g, 2, |x| {
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0 + x[0]]))
        })
        .unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let r = scalar_projections(&dm, &e1, &p, &q, alpha, &fam).unwrap();
        assert!((r.projection.constant - 1.0).abs() < 1e-9);
        let w = random_field(g);
        let r = scalar_projections(&w, &e1, &p, &q, alpha, &fam).unwrap();
        assert!(r.triangle_holds(1e-9));
        assert!(r.norm.constant <= 2.0 * r.matrix);
        assert!(r.projection.constant <= r.matrix * (1.0 + 1e-9));
    }
}
