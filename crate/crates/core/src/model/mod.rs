//! Problem representation, solver configuration and the quadratic file family.

mod config;
mod polyhedron;
mod problem;
mod quadratic;

pub use config::SolverConfig;
pub use polyhedron::{Polyhedron, StackedRow};
pub use problem::{
    EvalCounters, EvalCounts, HessianFn, Iterate, MatrixFn, NlpProblem, ScalarFn, VectorFn,
};
pub use quadratic::{load_problem, QuadraticConstraint, QuadraticNlpSpec, ReferenceSolution};
