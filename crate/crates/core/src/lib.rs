//! Lobatto IIIA collocation schemes of arbitrary stage count, the matching
//! Hermite interpolation splines, and higher-order sampled-data control
//! built on top of them, with a magnetic levitation scenario as the
//! flagship benchmark.
//!
//! The crate splits into three layers:
//!
//! * coefficient construction — [`nodes`], [`tableau`], [`derivatives`],
//!   [`spline`]: nodes c, coefficient matrix A, derivative matrices D and
//!   the interpolation splines H(tau) for any stage count 2..=8;
//! * integration — [`solver`]: one-step Newton solve of the implicit stage
//!   equations, dense output through the splines, fixed-step integration
//!   and a step-halving reference oracle;
//! * sampled control — [`control`], [`maglev`], [`plants`]: one-step target
//!   prediction, polynomial input shaping, optimization-based conversion to
//!   piecewise-constant input, closed-loop simulation against a fine-grained
//!   truth model, and sampling-limit sweeps.
//!
//! All numerics are generic over the scalar type via [`scalar::Real`]
//! (`f32` or `f64`); the `*64` aliases below fix the common double-precision
//! instantiation.

pub mod control;
pub mod derivatives;
pub mod error;
pub mod maglev;
pub mod nodes;
pub mod plants;
pub mod scalar;
pub mod solver;
pub mod spline;
pub mod tableau;
pub mod trace;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision node set.
pub type Nodes64 = nodes::NodeSet<f64>;
/// Double-precision tableau.
pub type Tableau64 = tableau::CollocationTableau<f64>;
/// Double-precision derivative matrices.
pub type Derivatives64 = derivatives::DerivativeMatrices<f64>;
/// Double-precision spline basis.
pub type Spline64 = spline::SplineBasis<f64>;
/// Double-precision stage solution.
pub type Solution64 = solver::StageSolution<f64>;
