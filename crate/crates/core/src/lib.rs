//! Numerical machinery for the second boundary value problem of the
//! Hessian-quotient transportation equation
//!
//! ```text
//! (S_n/S_l)^{1/(n-l)} [D²u - D²_x c(·, T_u)] = B(·, u)  in Ω⁻,   T_u(Ω⁻) = Ω⁺
//! ```
//!
//! * [`symfun`]: elementary symmetric functions and `σ_{n,l}` with analytic
//!   derivatives and identity/inequality audits.
//! * [`operator`]: the matrix operator `F[M]`, its linearization and the
//!   second-derivative contraction.
//! * [`cost`]: cost functions, the maps `Y` and `T_u`, the matrix `A`, the
//!   MTW tensor and c-transforms.
//! * [`geometry`]: star-shaped planar domains, distances, and the relative
//!   c-convexity and barrier checks.
//! * [`solver`]: polar finite differences and the continuation driver.
//! * [`estimates`]: post-hoc diagnostics on computed solutions.
//! * [`verify`]: sampled property suites over the algebra modules.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod error;
pub mod estimates;
pub mod geometry;
pub mod operator;
pub mod solver;
pub mod symfun;
pub mod verify;

pub use error::{Error, Result};
