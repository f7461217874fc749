//! The `varlex` command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;
use varlex_core::grid::GridFieldJson;
use varlex_core::{
    apq_constant, christ_goldberg, cz_decompose, derive_q, dyadic_family, enumerate_cubes, fractional_average,
    fractional_integral, fractional_maximal, full_fractional_maximal, luxemburg_norm, matrix_apq_direct,
    matrix_apq_reduced, multi_apq_constant, reciprocal_sum, reducing_operator, scalar_projections, sharp_maximal,
    sparse_domination_check, weighted_dyadic_maximal, CubeFamily, DomainGrid, DyadicCube, ExponentField,
    ExponentFieldJson, GridField, MatrixWeightField, MatrixWeightJson, ReducingOptions, Shift, Side, VectorField,
};

use crate::config::{read_json, ExperimentConfig};
use crate::report::VerificationReport;
use crate::suites;

#[derive(Debug, Parser)]
#[command(name = "varlex", version, about = "Weighted variable-exponent Lebesgue space numerics")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Luxemburg norm of a field, optionally weighted.
    Norm {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        exponent: PathBuf,
        #[arg(long)]
        weight: Option<PathBuf>,
    },
    /// Multiple-weight constant over a cube family.
    WeightConstant {
        /// One weight per slot.
        #[arg(long = "weight", required = true)]
        weights: Vec<PathBuf>,
        /// One exponent per slot.
        #[arg(long = "exponent", required = true)]
        exponents: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[command(flatten)]
        family: FamilyArgs,
    },
    /// Applies an operator and writes the output field.
    ApplyOp {
        #[arg(long, value_enum)]
        op: Op,
        /// One input per slot.
        #[arg(long = "field", required = true)]
        fields: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[command(flatten)]
        family: FamilyArgs,
        /// Cube `depth,j0[,j1]` for the averaging operator.
        #[arg(long)]
        cube: Option<String>,
        /// Power for the sharp maximal function.
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        /// Measure for the weighted dyadic maximal function.
        #[arg(long)]
        sigma: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Calderón–Zygmund stopping cubes and the sparse-domination check.
    Cz {
        #[arg(long = "field", required = true)]
        fields: Vec<PathBuf>,
        /// One measure per slot; unit weights when omitted.
        #[arg(long = "sigma")]
        sigmas: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        /// Level base; defaults to `2^{mn−α} + 1`.
        #[arg(long)]
        a: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Matrix-weight computations.
    Matw {
        #[command(subcommand)]
        command: MatwCommand,
    },
    /// Runs the verification suites of an experiment config.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Report JSON path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// CSV summary path.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Overrides the probe count of the config.
        #[arg(long)]
        probes: Option<usize>,
    },
    /// Prints a saved report.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Summary)]
        format: ReportFormat,
    },
}

#[derive(Debug, Subcommand)]
enum MatwCommand {
    /// Reducing operator on one cube.
    Reduce {
        #[command(flatten)]
        common: MatwArgs,
        #[arg(long, value_enum, default_value_t = SideArg::Primal)]
        side: SideArg,
        /// Cube `depth,j0[,j1]`.
        #[arg(long)]
        cube: String,
    },
    /// Matrix weight constant by the direct double integral.
    Direct {
        #[command(flatten)]
        common: MatwArgs,
        #[arg(long)]
        depth: usize,
    },
    /// Matrix weight constant through reducing operators.
    Reduced {
        #[command(flatten)]
        common: MatwArgs,
        #[arg(long)]
        depth: usize,
    },
    /// Christ–Goldberg maximal function of a vector field given by components.
    ChristGoldberg {
        #[command(flatten)]
        common: MatwArgs,
        #[arg(long)]
        depth: usize,
        /// One scalar field per component.
        #[arg(long = "component", required = true)]
        components: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scalar weights `|We|` and `‖W‖` against the matrix constant.
    Project {
        #[command(flatten)]
        common: MatwArgs,
        #[arg(long)]
        depth: usize,
        /// Unit vector, comma separated.
        #[arg(long)]
        e: String,
    },
}

#[derive(Debug, Args)]
struct MatwArgs {
    #[arg(long)]
    weight: PathBuf,
    /// The exponent `p(·)`; `q(·)` follows from `α`.
    #[arg(long)]
    exponent: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
}

#[derive(Debug, Args)]
struct FamilyArgs {
    #[arg(long, default_value_t = 4)]
    depth: usize,
    /// Use all `2^n` shifted dyadic systems.
    #[arg(long)]
    shifted: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Op {
    FractionalMaximal,
    FullFractionalMaximal,
    FractionalAverage,
    FractionalIntegral,
    SharpMaximal,
    WeightedDyadicMaximal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SideArg {
    Primal,
    Dual,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Summary,
    Json,
    Csv,
}

/// Errors that make the exit status 1 rather than 2.
#[derive(Debug)]
struct AssertionFailed(usize);

impl std::fmt::Display for AssertionFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} asserted checks failed", self.0)
    }
}

impl std::error::Error for AssertionFailed {}

/// Runs the command line; returns the process exit status: `0` on success,
/// `1` when verification assertions fail, `2` on usage or input errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) if e.is::<AssertionFailed>() => {
            eprintln!("varlex: {e}");
            1
        }
        Err(e) => {
            eprintln!("varlex: {e:#}");
            2
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Norm { field, exponent, weight } => {
            let f = load_field(&field)?;
            let p = load_exponent(&exponent)?;
            let f = match weight {
                Some(w) => f.mul(&load_field(&w)?)?,
                None => f,
            };
            print_json(&luxemburg_norm(&f, &p)?)
        }
        Command::WeightConstant { weights, exponents, alpha, family } => {
            if weights.len() != exponents.len() {
                bail!("{} weights but {} exponents", weights.len(), exponents.len());
            }
            let ws = weights.iter().map(|p| load_field(p)).collect::<anyhow::Result<Vec<_>>>()?;
            let ps = exponents.iter().map(|p| load_exponent(p)).collect::<anyhow::Result<Vec<_>>>()?;
            let g = *ws[0].grid();
            let q = derive_q(&reciprocal_sum(&ps)?, alpha, g.dim(), ps.len())?;
            let fam = family.build(&g)?;
            print_json(&multi_apq_constant(&ws, &ps, &q, alpha, &fam)?)
        }
        Command::ApplyOp { op, fields, alpha, family, cube, delta, sigma, out } => {
            let fs = fields.iter().map(|p| load_field(p)).collect::<anyhow::Result<Vec<_>>>()?;
            let g = *fs[0].grid();
            let result = match op {
                Op::FractionalMaximal => fractional_maximal(&fs, alpha, &family.build(&g)?)?,
                Op::FullFractionalMaximal => full_fractional_maximal(&fs, alpha)?,
                Op::FractionalAverage => {
                    let c = cube.as_deref().context("--cube is required for the averaging operator")?;
                    fractional_average(&fs, alpha, &parse_cube(c, g.dim())?)?
                }
                Op::FractionalIntegral => fractional_integral(&fs, alpha, None)?,
                Op::SharpMaximal => sharp_maximal(&fs[0], delta, &family.build(&g)?)?,
                Op::WeightedDyadicMaximal => {
                    let s = load_field(sigma.as_deref().context("--sigma is required for the weighted maximal operator")?)?;
                    weighted_dyadic_maximal(&fs[0], &s, &family.build(&g)?)?
                }
            };
            #[derive(Serialize)]
            struct Summary<'a> {
                op: varlex_core::OperatorKind,
                params: &'a varlex_core::OperatorParams,
                max: f64,
                output: Option<String>,
            }
            let json = result.field.to_json();
            write_optional(out.as_deref(), &json)?;
            if out.is_none() {
                return print_json(&json);
            }
            print_json(&Summary {
                op: result.op,
                params: &result.params,
                max: result.field.max_abs(),
                output: out.map(|p| p.display().to_string()),
            })
        }
        Command::Cz { fields, sigmas, alpha, a, out } => {
            let fs = fields.iter().map(|p| load_field(p)).collect::<anyhow::Result<Vec<_>>>()?;
            let g = *fs[0].grid();
            let sigmas = if sigmas.is_empty() {
                vec![GridField::constant(g, 1.0); fs.len()]
            } else {
                sigmas.iter().map(|p| load_field(p)).collect::<anyhow::Result<Vec<_>>>()?
            };
            let a = a.unwrap_or_else(|| 2f64.powf((fs.len() * g.dim()) as f64 - alpha) + 1.0);
            let dec = cz_decompose(&fs, &sigmas, alpha, a, None)?;
            let sparse = sparse_domination_check(&dec, &fs, &sigmas, alpha)?;
            write_optional(out.as_deref(), &dec)?;
            #[derive(Serialize)]
            struct Summary {
                a: f64,
                levels: usize,
                stopping_cubes: usize,
                residual_cells: usize,
                sparse: varlex_core::SparseReport<f64>,
            }
            print_json(&Summary {
                a,
                levels: dec.levels.len(),
                stopping_cubes: dec.n_cubes(),
                residual_cells: dec.residual_cells(),
                sparse,
            })
        }
        Command::Matw { command } => matw(command),
        Command::Verify { config, out, csv, probes } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.apply_env()?;
            if let Some(k) = probes {
                cfg.probes = k;
                cfg.validate()?;
            }
            let report = suites::run(&cfg);
            if let Some(path) = &out {
                std::fs::write(path, report.to_json()).with_context(|| format!("writing {}", path.display()))?;
            }
            if let Some(path) = &csv {
                std::fs::write(path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
            print!("{}", report.summary());
            let failed = report.failures().count();
            if failed > 0 {
                return Err(AssertionFailed(failed).into());
            }
            if let Some(budget) = cfg.time_budget_s {
                if report.runtime_s > budget {
                    eprintln!("varlex: run took {:.1} s, over the {budget} s budget", report.runtime_s);
                }
            }
            Ok(())
        }
        Command::Report { input, format } => {
            let report: VerificationReport = read_json(&input)?;
            match format {
                ReportFormat::Summary => print!("{}", report.summary()),
                ReportFormat::Json => println!("{}", report.to_json()),
                ReportFormat::Csv => print!("{}", report.to_csv()),
            }
            Ok(())
        }
    }
}

fn matw(command: MatwCommand) -> anyhow::Result<()> {
    let opts = ReducingOptions::default();
    match command {
        MatwCommand::Reduce { common, side, cube } => {
            let (w, p, q) = common.load()?;
            let c = parse_cube(&cube, w.grid().dim())?;
            let (side, r) = match side {
                SideArg::Primal => (Side::Primal, q),
                SideArg::Dual => (Side::Dual, p.conjugate()?),
            };
            print_json(&reducing_operator(&w, &r, side, &c, &opts)?)
        }
        MatwCommand::Direct { common, depth } => {
            let (w, p, q) = common.load()?;
            print_json(&matrix_apq_direct(&w, &p, &q, common.alpha, &dyadic_family(w.grid(), depth)?, None)?)
        }
        MatwCommand::Reduced { common, depth } => {
            let (w, p, q) = common.load()?;
            print_json(&matrix_apq_reduced(&w, &p, &q, common.alpha, &dyadic_family(w.grid(), depth)?, &opts)?)
        }
        MatwCommand::ChristGoldberg { common, depth, components, out } => {
            let (w, _, _) = common.load()?;
            let comps = components.iter().map(|p| load_field(p)).collect::<anyhow::Result<Vec<_>>>()?;
            if comps.len() != w.d() {
                bail!("{} components for a {}x{} weight", comps.len(), w.d(), w.d());
            }
            let g = *w.grid();
            let vals = (0..g.n_cells()).map(|i| DVector::from_fn(w.d(), |k, _| comps[k].values()[i])).collect();
            let f = VectorField::new(g, w.d(), vals)?;
            let m = christ_goldberg(&f, &w, common.alpha, &dyadic_family(&g, depth)?)?;
            let json = m.to_json();
            write_optional(out.as_deref(), &json)?;
            print_json(&json)
        }
        MatwCommand::Project { common, depth, e } => {
            let (w, p, q) = common.load()?;
            let e: Vec<f64> = e
                .split(',')
                .map(|s| s.trim().parse::<f64>().with_context(|| format!("--e: `{s}` is not a number")))
                .collect::<anyhow::Result<_>>()?;
            if e.len() != w.d() {
                bail!("--e has {} entries for a {}x{} weight", e.len(), w.d(), w.d());
            }
            let fam = dyadic_family(w.grid(), depth)?;
            let rep = scalar_projections(&w, &DVector::from_vec(e), &p, &q, common.alpha, &fam)?;
            #[derive(Serialize)]
            struct Summary {
                projection: f64,
                norm: f64,
                basis: Vec<f64>,
                basis_sum: f64,
                matrix: f64,
                c_d: f64,
                scalar_check: f64,
            }
            let scalar_check = apq_constant(&w.norm_field(), &p, &q, common.alpha, &fam)?.constant;
            print_json(&Summary {
                projection: rep.projection.constant,
                norm: rep.norm.constant,
                basis: rep.basis,
                basis_sum: rep.basis_sum,
                matrix: rep.matrix,
                c_d: rep.c_d,
                scalar_check,
            })
        }
    }
}

impl MatwArgs {
    fn load(&self) -> anyhow::Result<(MatrixWeightField, ExponentField, ExponentField)> {
        let json: MatrixWeightJson = read_json(&self.weight)?;
        let w = MatrixWeightField::from_json(&json)?;
        let p = load_exponent(&self.exponent)?;
        if !p.grid().same_geometry(w.grid()) {
            bail!("{} and {} are on different grids", self.weight.display(), self.exponent.display());
        }
        let q = derive_q(&p, self.alpha, w.grid().dim(), 1)?;
        Ok((w, p, q))
    }
}

impl FamilyArgs {
    fn build(&self, g: &DomainGrid) -> anyhow::Result<CubeFamily> {
        Ok(if self.shifted {
            enumerate_cubes(g, &Shift::all(g.dim()), self.depth)?
        } else {
            dyadic_family(g, self.depth)?
        })
    }
}

fn load_field(path: &Path) -> anyhow::Result<GridField> {
    let json: GridFieldJson = read_json(path)?;
    GridField::from_json(&json).with_context(|| format!("in {}", path.display()))
}

/// Accepts an exponent file with a class tag, or a plain field whose class is inferred.
fn load_exponent(path: &Path) -> anyhow::Result<ExponentField> {
    let value: serde_json::Value = read_json(path)?;
    let p = if value.get("class").is_some() {
        let json: ExponentFieldJson = serde_json::from_value(value).with_context(|| format!("in {}", path.display()))?;
        ExponentField::from_json(&json)
    } else {
        let json: GridFieldJson = serde_json::from_value(value).with_context(|| format!("in {}", path.display()))?;
        GridField::from_json(&json).and_then(ExponentField::infer)
    };
    p.with_context(|| format!("in {}", path.display()))
}

/// `depth,j0[,j1]` for an unshifted dyadic cube.
fn parse_cube(s: &str, dim: usize) -> anyhow::Result<DyadicCube> {
    let parts: Vec<i64> = s
        .split(',')
        .map(|t| t.trim().parse::<i64>().with_context(|| format!("cube `{s}`: `{t}` is not an integer")))
        .collect::<anyhow::Result<_>>()?;
    if parts.len() != dim + 1 {
        bail!("cube `{s}`: expected depth and {dim} corner indices");
    }
    let depth = i32::try_from(parts[0]).context("cube depth out of range")?;
    Ok(DyadicCube::new(dim, Shift::ZERO, depth, [parts[1], parts.get(2).copied().unwrap_or(0)]))
}

fn print_json<T: Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_optional<T: Serialize>(path: Option<&Path>, v: &T) -> anyhow::Result<()> {
    if let Some(p) = path {
        std::fs::write(p, serde_json::to_string_pretty(v)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_syntax() {
        let c = parse_cube("2,1", 1).unwrap();
        assert_eq!((c.depth, c.corner), (2, [1, 0]));
        assert!(parse_cube("2", 2).is_err());
        assert!(parse_cube("x,1", 1).is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["varlex", "frobnicate"]), 2);
        assert_eq!(run(["varlex", "norm"]), 2);
    }
}
