//! Numerical toolkit for entire functions built as infinite towers of
//! affine exponentials E_lambda(z) = lambda e^z: prescribe the closed set
//! the orbit of 0 fills, solve for the lambda-sequence, build the
//! approximating towers with certified dyadic gap budgets, certify the
//! construction through inverse-branch convergence, linearize repelling
//! fixed points, and iterate or render the resulting dynamics.

pub mod analytic;
pub mod branches;
pub mod error;
pub mod numeric;
pub mod target;
pub mod tower;

pub use error::{CoreError, CoreResult};
pub use numeric::{Eval, EscapeInfo, LogScale, NumericContract};
