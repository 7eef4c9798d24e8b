//! Dense-to-sparse linear programs and a bounded-variable revised simplex
//! solver with warm starts.
//!
//! ```
//! use bess_lp::{solve, LpProblem, LpStatus, SolverOptions};
//!
//! // min -2x - y  s.t.  x + y <= 1,  0 <= x, y <= 1
//! let mut lp = LpProblem::new();
//! let x = lp.add_var(-2.0, 0.0, 1.0);
//! let y = lp.add_var(-1.0, 0.0, 1.0);
//! lp.add_le(&[(x, 1.0), (y, 1.0)], 1.0);
//! let sol = solve(&lp, &SolverOptions::default()).unwrap();
//! assert_eq!(sol.status, LpStatus::Optimal);
//! assert!((sol.objective + 2.0).abs() < 1e-9);
//! ```
// NaN must fail these checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod factor;
mod lp_format;
mod problem;
mod simplex;

pub use lp_format::write_lp_format;
pub use problem::{check_feasible, FeasibilityReport, LpProblem, Row, RowKind};
pub use simplex::{
    solve, solve_from, Basis, LpSolution, LpStatus, PivotRule, SolverOptions, VarStatus,
};

#[derive(Debug, thiserror::Error)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("variable {var} has invalid bounds [{lower}, {upper}]")]
    InvalidBounds { var: usize, lower: f64, upper: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}
