//! Convex quadratically constrained quadratic programming.
//!
//! ```
//! use qcqp::{solve, QcqpProblem, QuadIneq, SparseVec, Status, SymMatrix};
//!
//! // minimise x + y  subject to  x² + y² ≤ 2
//! let mut p = QcqpProblem::new(2);
//! p.objective.c = vec![1.0, 1.0];
//! let mut disk = SymMatrix::new();
//! disk.push(0, 0, 2.0);
//! disk.push(1, 1, 2.0);
//! p.quad_ineq.push(QuadIneq { p: disk, q: SparseVec::new(), s: -2.0 });
//!
//! let sol = solve(&p, 1e-8).unwrap();
//! assert_eq!(sol.status, Status::Optimal);
//! assert!((sol.objective + 2.0).abs() < 1e-6);
//! ```

mod cones;
mod error;
mod ipm;
mod kkt;
mod ldl;
mod polish;
mod problem;
pub mod text;

pub use error::QcqpError;
pub use ipm::{solve, solve_with, QcqpSolution, SolverOptions, Status};
pub use kkt::{lagrangian_gradient, verify_kkt, Duals, KktResiduals};
pub use ldl::SparseLdl;
pub use problem::{LinearEq, Objective, QcqpProblem, QuadIneq, SparseVec, SymMatrix, PSD_TOLERANCE};
