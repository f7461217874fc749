//! Numerical toolkit for weighted variable-exponent Lebesgue spaces.
//!
//! The kernels are generic over the scalar type (see [`scalar::Real`]); the
//! aliases at the crate root fix `f64`, which is what the command line and
//! the verification harness use.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exponents;
pub mod grid;
pub mod matrixw;
pub mod operators;
pub mod scalar;
pub mod varlebesgue;
pub mod weights;

pub use error::{Result, VarlexError};
pub use exponents::{
    conjugate, cube_exponents, derive_q, log_holder, reciprocal_sum, CubeExponents, ExponentClass,
    ExponentFieldJson, LogHolderReport,
};
pub use grid::{
    build_domain, dyadic_family, enumerate_cubes, integrate_over, CellBox, CellSums, CubeFamily,
    DyadicCube, Shift,
};
pub use matrixw::{
    averaging_ratio, avg_norm, avg_norm_side, christ_goldberg, commutation_gap, fit_directions,
    held_out_directions, matrix_apq_direct, matrix_apq_reduced, mvee_symmetric, op_norm,
    reducing_operator, scalar_projections, vector_average, AveragingRatio, MatrixWeightField,
    MatrixWeightJson, Mvee, ProjectionReport, ReducedApqReport, ReducingOperator, ReducingOptions,
    Side, VectorField, MATRIX_PAIR_BUDGET,
};
pub use operators::{
    cz_decompose, dyadic_shifted_cover_check, fractional_average, fractional_integral,
    fractional_maximal, full_fractional_maximal, sharp_maximal, sparse_domination_check,
    weighted_dyadic_maximal, CoverReport, CubeProducts, CzDecomposition, CzLevel, OperatorKind,
    OperatorOutput, OperatorParams, SparseReport, StoppingCube, INTEGRAL_BUDGET,
};
pub use scalar::Real;
pub use varlebesgue::{
    bmo_norm, dual_lower_bound, holder_check, luxemburg_norm, luxemburg_on, luxemburg_slice,
    modular, modular_norm_bounds, product_norm_check, weighted_norm, DualReport, HolderCheck,
    LuxemburgResult, ModularNormReport, ProductNormCheck,
};

pub use weights::{
    ainfty_absorption, apq_constant, classical_ap, factor_bound_check, multi_apq_constant,
    multi_apq_constant_const, q_relation_diagnostic, reverse_holder, sup_over_cubes, variable_ap,
    vweight4_check, AbsorptionReport, FactorBoundReport, Vweight4Report, WeightConstantReport,
};

pub type DomainGrid = grid::DomainGrid<f64>;
pub type GridField = grid::GridField<f64>;
pub type ExponentField = exponents::ExponentField<f64>;
pub type WeightVector = weights::WeightVector<f64>;
