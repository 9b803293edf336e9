//! Numerical solver for BSDEs with singular terminal condition `Y_T = +∞`:
//!
//! ```text
//! −dY_t = (f(Y_t)/η_t + λ_t) dt − Z_t dW_t,   Y_T = +∞.
//! ```
//!
//! The singularity is removed by replacing `+∞` with a finite terminal value
//! at `T − Δ` built from an asymptotic expansion, after which a backward
//! implicit Euler scheme with regression-based conditional expectations takes
//! over.

// NaN-rejecting `!(x > 0.0)` guards are deliberate; quadrature weights are
// kept as published.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision, clippy::needless_range_loop)]

pub mod error;
pub mod quad;
pub mod roots;

pub mod generator;
pub mod noise;
pub mod forward;
pub mod scheme;
pub mod expansion;
pub mod analysis;
pub mod liquidation;

pub use error::{Error, Result};
pub use forward::{simulate, CoefficientModel, EtaModel, LambdaModel, PathEnsemble};
pub use generator::{GeneratorKind, GeneratorModel, PhiDerivs};
pub use scheme::{solve_singular, CondExpEstimator, SchemeConfig, SchemeResult, SingularProblem};
pub use expansion::ExpansionSpec;
