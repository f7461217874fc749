use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum VarlexError {
    #[error("cells per axis must be a power of two, got {0}")]
    NotPowerOfTwo(usize),
    #[error("dimension {0} is not supported (expected 1 or 2)")]
    UnsupportedDimension(usize),
    #[error("half-width must be positive and finite, got {0}")]
    BadHalfWidth(f64),
    #[error("depth {depth} exceeds grid resolution (max {max})")]
    DepthExceedsResolution { depth: usize, max: usize },
    #[error("field length {got} does not match grid with {expected} cells")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("value at cell {cell} is not a valid weight ({value})")]
    InvalidWeight { cell: usize, value: f64 },
    #[error("exponent at cell {cell} = {value} violates class {class}")]
    ExponentClass {
        cell: usize,
        value: f64,
        class: &'static str,
    },
    #[error("conjugate exponent unbounded: p = {value} at cell {cell}")]
    ConjugateUnbounded { cell: usize, value: f64 },
    #[error("1/q = {inv_q} is not positive at cell {cell}")]
    NonPositiveReciprocal { cell: usize, inv_q: f64 },
    #[error("delta undefined on cube: 1/eta = {inv_eta} <= alpha/n = {alpha_over_n}")]
    DeltaUndefined { inv_eta: f64, alpha_over_n: f64 },
    #[error(
        "inconsistent exponents at cell {cell}: 1/p - 1/q = {got}, expected alpha/n = {expected}"
    )]
    InconsistentExponents {
        cell: usize,
        got: f64,
        expected: f64,
    },
    #[error("non-finite value at cell {cell}")]
    NonFinite { cell: usize },
    #[error("Luxemburg bracket overflowed the representable range")]
    BracketOverflow,
    #[error("fractional order {alpha} outside [0, {limit})")]
    BadOrder { alpha: f64, limit: f64 },
    #[error("CZ base a = {a} must exceed 2^(mn - alpha) = {bound}")]
    BaseTooSmall { a: f64, bound: f64 },
    #[error("cost {requested} exceeds budget {budget}; raise the budget explicitly")]
    CostBudget { requested: u128, budget: u128 },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("zero vector has no average norm")]
    ZeroVector,
    #[error("matrix at cell {cell} is not symmetric positive definite")]
    NotSpd { cell: usize },
    #[error("MVEE did not converge in {0} iterations")]
    MveeNoConvergence(usize),
    #[error("reducing operator certification failed: factor {factor} (allowed {allowed}), lower ratio {lower}")]
    CertificationFailed {
        factor: f64,
        allowed: f64,
        lower: f64,
    },
    #[error("decomposition invariant violated: {0}")]
    Invariant(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, VarlexError>;
