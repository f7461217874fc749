//! Experiment configuration: a versioned JSON schema describing the grid,
//! exponent and weight specifications, trial counts and tolerances.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use varlex_core::{DomainGrid, ExponentField, ExponentFieldJson, GridField};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "VARLEX_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub seed: u64,
    #[serde(default)]
    pub rng: RngKind,
    pub grid: GridSpec,
    /// Fractional order used by the scalar suites.
    pub alpha: f64,
    /// Number of function slots for the multilinear suites.
    pub m: usize,
    /// Matrix dimension for the matrix suites.
    pub d: usize,
    /// Depth of the dyadic family used by the weight and operator suites.
    pub depth: usize,
    /// Random probe inputs per cube; also the MVEE direction count when set
    /// through `--probes` on the command line.
    #[serde(default = "default_probes")]
    pub probes: usize,
    /// Exponents `p₁, …, p_m` of the reference configuration.
    pub exponents: Vec<ExponentSpec>,
    /// Weights `ω₁, …, ω_m` of the reference configuration.
    pub weights: Vec<WeightSpec>,
    #[serde(default)]
    pub trials: Trials,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub matrix: MatrixSpec,
    #[serde(default)]
    pub cz: CzSpec,
    #[serde(default)]
    pub cover: CoverSpec,
    /// Suites to run; empty means all of them.
    #[serde(default)]
    pub suites: Vec<Suite>,
    #[serde(default)]
    pub time_budget_s: Option<f64>,
    /// Directory that relative `file` specs are resolved against. Set by the
    /// loader, never read from JSON.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_probes() -> usize {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RngKind {
    #[default]
    Chacha8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    #[serde(rename = "L")]
    pub half_width: f64,
    #[serde(rename = "N")]
    pub cells_per_axis: usize,
}

impl GridSpec {
    pub fn build(&self) -> anyhow::Result<DomainGrid> {
        Ok(DomainGrid::new(self.n, self.half_width, self.cells_per_axis)?)
    }

    pub fn with_cells(&self, cells_per_axis: usize) -> Self {
        Self { cells_per_axis, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExponentSpec {
    Constant { value: f64 },
    /// `base + slope·x₀`
    Affine { base: f64, slope: f64 },
    /// `base + amplitude·sin(frequency·x₀ + phase)`
    Sine {
        base: f64,
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `ExponentField` JSON on disk.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightSpec {
    Constant { value: f64 },
    /// `(offset + |x|)^exponent`
    Power {
        exponent: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `exp(amplitude·exp(−|x − center|²/width²))`
    LogBump { amplitude: f64, center: f64, width: f64 },
    /// `exp(U)` per cell with `U` uniform on `[−spread, spread]`, drawn from
    /// the experiment generator.
    RandomLogUniform { spread: f64 },
    /// `GridField` JSON on disk.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Foundations,
    TrivialWeight,
    Averaging,
    Maximal,
    Cz,
    Cover,
    Matrix,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Foundations,
        Suite::TrivialWeight,
        Suite::Averaging,
        Suite::Maximal,
        Suite::Cz,
        Suite::Cover,
        Suite::Matrix,
    ];

    /// Stream index of the suite's generator.
    pub fn stream(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Trials {
    /// Random fields per constant exponent in the Lebesgue collapse check.
    pub collapse: usize,
    pub modular: usize,
    pub holder: usize,
    pub product: usize,
    pub dual: usize,
    pub vweight: usize,
    pub averaging: usize,
    pub maximal: usize,
    pub cz: usize,
    pub matrix: usize,
    /// Scalar fields in the `d = 1` collapse of the matrix suite.
    pub matrix_scalar: usize,
}

impl Default for Trials {
    fn default() -> Self {
        Self {
            collapse: 100,
            modular: 500,
            holder: 500,
            product: 50,
            dual: 50,
            vweight: 20,
            averaging: 20,
            maximal: 4,
            cz: 50,
            matrix: 20,
            matrix_scalar: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub collapse: f64,
    pub modular: f64,
    pub holder: f64,
    pub trivial: f64,
    pub averaging: f64,
    /// Allowed `measured C` in the single-weight implication check.
    pub vweight_c: f64,
    pub matrix_two_path: f64,
    pub mvee_slack: f64,
    pub apq_band: f64,
    pub projection: f64,
    pub cover_drift: f64,
    /// Relative slack for exact-in-theory inequalities evaluated in floating point.
    pub rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            collapse: 1e-8,
            modular: 1e-9,
            holder: 1e-9,
            trivial: 1e-6,
            averaging: 1e-8,
            vweight_c: 16.0,
            matrix_two_path: 1e-4,
            mvee_slack: 0.01,
            apq_band: 50.0,
            projection: 1e-6,
            cover_drift: 0.1,
            rel: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixSpec {
    pub cells: usize,
    pub depth: usize,
    pub alpha: f64,
    /// MVEE boundary directions; `None` means `64·d`.
    pub directions: Option<usize>,
}

impl Default for MatrixSpec {
    fn default() -> Self {
        Self {
            cells: 64,
            depth: 4,
            alpha: 0.25,
            directions: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CzSpec {
    pub cells: usize,
    /// Added to `2^{2n−α}` to form the base `a`.
    pub base_margin: f64,
}

impl Default for CzSpec {
    fn default() -> Self {
        Self {
            cells: 1024,
            base_margin: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverSpec {
    pub coarse: usize,
    pub fine: usize,
}

impl Default for CoverSpec {
    fn default() -> Self {
        Self { coarse: 512, fine: 1024 }
    }
}

impl ExperimentConfig {
    /// Parses and validates a config; errors name the offending line and field.
    pub fn from_json_str(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| anyhow::anyhow!("config line {}, column {}: {e}", e.line(), e.column()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_json_str(&text).with_context(|| format!("in {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Applies the seed override from the environment, if present.
    pub fn apply_env(&mut self) -> anyhow::Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().with_context(|| format!("{SEED_ENV}={v} is not an unsigned integer"))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.schema != SCHEMA_VERSION {
            bail!("field `schema`: unsupported version {} (expected {SCHEMA_VERSION})", self.schema);
        }
        self.grid.build().context("field `grid`")?;
        if self.m == 0 {
            bail!("field `m`: must be at least 1");
        }
        if !(1..=4).contains(&self.d) {
            bail!("field `d`: must be in 1..=4, got {}", self.d);
        }
        if self.exponents.len() != self.m {
            bail!("field `exponents`: expected {} entries (one per slot), got {}", self.m, self.exponents.len());
        }
        if self.weights.len() != self.m {
            bail!("field `weights`: expected {} entries (one per slot), got {}", self.m, self.weights.len());
        }
        let limit = (self.m * self.grid.n) as f64;
        if !(0.0..limit).contains(&self.alpha) {
            bail!("field `alpha`: must lie in [0, {limit}), got {}", self.alpha);
        }
        if self.depth > self.grid.cells_per_axis.trailing_zeros() as usize {
            bail!("field `depth`: {} exceeds the grid resolution", self.depth);
        }
        if self.probes == 0 {
            bail!("field `probes`: must be positive");
        }
        for (name, cells) in [("matrix.cells", self.matrix.cells), ("cz.cells", self.cz.cells), ("cover.coarse", self.cover.coarse), ("cover.fine", self.cover.fine)] {
            if !cells.is_power_of_two() {
                bail!("field `{name}`: {cells} is not a power of two");
            }
        }
        if self.matrix.depth > self.matrix.cells.trailing_zeros() as usize {
            bail!("field `matrix.depth`: {} exceeds the matrix grid resolution", self.matrix.depth);
        }
        Ok(())
    }

    pub fn suites(&self) -> Vec<Suite> {
        if self.suites.is_empty() {
            Suite::ALL.to_vec()
        } else {
            let mut s = self.suites.clone();
            s.sort();
            s.dedup();
            s
        }
    }

    /// Generator for trial `trial` of `suite`: independent of evaluation order.
    pub fn rng(&self, suite: Suite, trial: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(suite.stream() << 32 | trial);
        r
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}

impl ExponentSpec {
    pub fn build(&self, grid: DomainGrid, base_dir: &Path) -> anyhow::Result<ExponentField> {
        Ok(match self {
            ExponentSpec::Constant { value } => ExponentField::constant(grid, *value)?,
            ExponentSpec::Affine { base, slope } => ExponentField::from_fn(grid, |x| base + slope * x[0])?,
            ExponentSpec::Sine { base, amplitude, frequency, phase } => {
                ExponentField::from_fn(grid, |x| base + amplitude * (frequency * x[0] + phase).sin())?
            }
            ExponentSpec::File { path } => {
                let json: ExponentFieldJson = read_json(&resolve(base_dir, path))?;
                let p = ExponentField::from_json(&json)?;
                if !p.grid().same_geometry(&grid) {
                    bail!("exponent file {} does not match the configured grid", path.display());
                }
                p
            }
        })
    }
}

impl WeightSpec {
    pub fn build<R: Rng>(&self, grid: DomainGrid, base_dir: &Path, rng: &mut R) -> anyhow::Result<GridField> {
        let radius = |x: [f64; 2]| (x[0] * x[0] + x[1] * x[1]).sqrt();
        let w = match self {
            WeightSpec::Constant { value } => GridField::constant(grid, *value),
            WeightSpec::Power { exponent, offset } => GridField::from_fn(grid, |x| (offset + radius(x)).powf(*exponent)),
            WeightSpec::LogBump { amplitude, center, width } => GridField::from_fn(grid, |x| {
                let r = radius([x[0] - center, x[1]]);
                (amplitude * (-(r * r) / (width * width)).exp()).exp()
            }),
            WeightSpec::RandomLogUniform { spread } => {
                let vals = (0..grid.n_cells()).map(|_| rng.gen_range(-spread..=*spread).exp()).collect();
                GridField::new(grid, vals)?
            }
            WeightSpec::File { path } => {
                let json = read_json(&resolve(base_dir, path))?;
                let w = GridField::from_json(&json)?;
                if !w.grid().same_geometry(&grid) {
                    bail!("weight file {} does not match the configured grid", path.display());
                }
                w
            }
        };
        w.validate_weight()?;
        Ok(w)
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{} line {}, column {}: {e}", path.display(), e.line(), e.column()))
}
