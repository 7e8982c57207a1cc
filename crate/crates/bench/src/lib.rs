//! Workloads shared by the benchmarks.

use nalgebra::{DMatrix, DVector};
use npasa_core::model::QuadraticConstraint;
use npasa_core::{NlpProblem, Polyhedron, QuadraticNlpSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `min −Σx  s.t.  ‖x‖² = n,  x ≥ 0`, solved by `x = 1` with `λ = 1/2`.
/// The two-dimensional case is the `circle-interior` corpus problem.
pub fn sphere_problem(n: usize) -> NlpProblem {
    let constraint = QuadraticConstraint {
        p: DMatrix::identity(n, n) * 2.0,
        a: DVector::zeros(n),
        b: -(n as f64),
    };
    let omega = Polyhedron::from_box(DVector::zeros(n), DVector::from_element(n, f64::INFINITY))
        .expect("orthant is a valid polyhedron");
    QuadraticNlpSpec::new("sphere", DMatrix::zeros(n, n), DVector::from_element(n, -1.0), vec![constraint], omega)
        .expect("sphere problem is well formed")
        .to_problem()
}

/// Feasible start for [`sphere_problem`] a fixed distance off the solution.
pub fn sphere_start(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(n, |_, _| 1.0 + rng.random_range(-0.3..0.3))
}

/// Random polyhedra with a box, `rows` two-sided rows through the origin
/// neighbourhood, and a point to project for each.
pub fn projection_instances(n: usize, rows: usize, count: usize, seed: u64) -> Vec<(Polyhedron, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let a = DMatrix::from_fn(rows, n, |_, _| rng.random_range(-1.0..1.0));
            let row_lo = DVector::from_fn(rows, |_, _| rng.random_range(-1.0..0.0));
            let row_hi = DVector::from_fn(rows, |i, _| row_lo[i] + rng.random_range(0.1..1.5));
            let poly = Polyhedron::new(a, row_lo, row_hi, DVector::from_element(n, -2.0), DVector::from_element(n, 2.0))
                .expect("random polyhedron is well formed");
            let c = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            (poly, c)
        })
        .collect()
}
