//! Two-phase nonlinear polyhedral active set solver.
//!
//! The solver targets
//!
//! ```text
//!   min f(x)  s.t.  h(x) = 0,  x ∈ Ω
//! ```
//!
//! with Ω a polyhedron. Phase one runs augmented-Lagrangian global steps;
//! phase two runs local steps (a feasibility restoration followed by a
//! multiplier refinement) that converge quadratically near a regular
//! solution. Branching between the phases is driven by KKT error estimators.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boxqp;
pub mod corpus;
pub mod diagnostics;
pub mod driver;
pub mod error;
pub mod estimators;
pub mod model;
pub mod oracle;
pub mod phase1;
pub mod phase2;
pub mod projection;
pub mod qp;
pub mod subsolve;

pub use driver::{
    fit_convergence_order, npasa_solve, LogRecord, Phase, RateFit, SolveOutcome, Status,
};
pub use error::{Error, Result};
pub use estimators::EstimatorReport;
pub use model::{
    load_problem, Iterate, NlpProblem, Polyhedron, QuadraticNlpSpec, SolverConfig, StackedRow,
};
pub use projection::ProjectionResult;
