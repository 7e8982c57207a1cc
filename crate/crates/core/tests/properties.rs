//! Property tests of the public API across modules.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use npasa_core::corpus::{self, CorpusProblem};
use npasa_core::driver::{fit_convergence_order, npasa_solve};
use npasa_core::estimators::estimate;
use npasa_core::model::{Iterate, QuadraticConstraint, QuadraticNlpSpec, ReferenceSolution, SolverConfig};
use npasa_core::phase1::global_step;
use npasa_core::phase2::restore_feasibility;
use npasa_core::projection::project;
use npasa_core::subsolve::minimize_em0_regularized;
use npasa_core::Polyhedron;

const INF: f64 = f64::INFINITY;

fn corpus_problem() -> impl Strategy<Value = CorpusProblem> {
    (0..corpus::corpus().len()).prop_map(|i| corpus::corpus().swap_remove(i))
}

/// Bound pairs where either side may be infinite.
fn bounds(len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((-2.0..0.5f64, 0.0..2.0f64, 0..4u8), len).prop_map(|v| {
        v.into_iter()
            .map(|(lo, width, kind)| match kind {
                0 => (-INF, lo + width),
                1 => (lo, INF),
                2 => (-INF, INF),
                _ => (lo, lo + width),
            })
            .unzip()
    })
}

/// Polyhedra with up to two rows containing a neighbourhood of the origin, so
/// they are never empty.
fn polyhedron() -> impl Strategy<Value = Polyhedron> {
    (1..5usize, 0..3usize)
        .prop_flat_map(|(n, m)| {
            (
                prop::collection::vec(-1.0..1.0f64, n * m),
                prop::collection::vec((0.1..1.0f64, 0.1..1.0f64), m),
                bounds(n),
                Just((n, m)),
            )
        })
        .prop_map(|(a, rows, (lo, hi), (n, m))| {
            let a = DMatrix::from_row_slice(m, n, &a);
            let row_lo = DVector::from_iterator(m, rows.iter().map(|r| -r.0));
            let row_hi = DVector::from_iterator(m, rows.iter().map(|r| r.1));
            let lo = DVector::from_iterator(n, lo.iter().map(|&v| v.min(0.0)));
            let hi = DVector::from_iterator(n, hi.iter().map(|&v| v.max(0.0)));
            Polyhedron::new(a, row_lo, row_hi, lo, hi).unwrap()
        })
}

fn point(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-3.0..3.0f64, n).prop_map(DVector::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stacked_residual_length(poly in polyhedron(), seed in 0..1000u64) {
        let x = DVector::from_fn(poly.dim(), |i, _| (seed as f64 + i as f64).sin());
        let r = poly.stacked_residual(&x).unwrap();
        prop_assert_eq!(r.len(), 2 * poly.num_rows() + 2 * poly.dim());
    }

    #[test]
    fn projection_is_feasible_and_nonexpansive(
        (poly, c1, c2) in polyhedron().prop_flat_map(|p| { let n = p.dim(); (Just(p), point(n), point(n)) })
    ) {
        let a = project(&poly, &c1).unwrap();
        let b = project(&poly, &c2).unwrap();
        prop_assert!(poly.is_feasible(&a.y_star, 1e-8));
        prop_assert!(a.kkt_residual <= 1e-8);
        prop_assert!((&a.y_star - &b.y_star).norm() <= (&c1 - &c2).norm() + 1e-10);
        let again = project(&poly, &a.y_star).unwrap();
        prop_assert!((&again.y_star - &a.y_star).amax() <= 1e-10);
    }

    #[test]
    fn estimator_ordering_and_decomposition(
        cp in corpus_problem(),
        x in prop::collection::vec(0.0..3.0f64, 2),
        lambda in -2.0..2.0f64,
        mu in prop::collection::vec(0.0..2.0f64, 2),
    ) {
        let p = &cp.problem;
        let x = DVector::from_vec(x);
        // only the finite lower bounds carry multipliers
        let mu = DVector::from_vec(vec![mu[0], mu[1], 0.0, 0.0]);
        let rep = estimate(p, &x, &DVector::from_element(1, lambda), &mu, 0.0).unwrap();
        let (e0, em0) = (rep.e0.unwrap(), rep.em0.unwrap());
        prop_assert!(rep.e1 <= e0 + 1e-12);
        prop_assert!(rep.em1 <= em0 + 1e-12);
        prop_assert!((rep.e1 * rep.e1 - (rep.em1 + rep.ec)).abs() <= 1e-10 * (1.0 + rep.e1 * rep.e1));
        prop_assert!((e0 * e0 - (em0 + rep.ec)).abs() <= 1e-10 * (1.0 + e0 * e0));
    }

    #[test]
    fn global_step_identities(
        cp in corpus_problem(),
        x in prop::collection::vec(0.2..2.0f64, 2),
        lambda in -1.0..1.0f64,
        q in 1.0..100.0f64,
    ) {
        let p = &cp.problem;
        let it = Iterate::new(p, DVector::from_vec(x), DVector::from_element(1, lambda), DVector::zeros(4)).unwrap();
        let gs = global_step(p, &it, q, &SolverConfig::default()).unwrap();
        let h = p.constraints(&gs.iterate.x);
        prop_assert_eq!(&gs.iterate.lambda, &(&gs.lambda_bar + h * (2.0 * q)));
        prop_assert!(gs.iterate.mu.iter().all(|&m| m >= 0.0));
        // upper bounds are infinite
        prop_assert_eq!(gs.iterate.mu[2], 0.0);
        prop_assert_eq!(gs.iterate.mu[3], 0.0);
        prop_assert!(p.omega().is_feasible(&gs.iterate.x, 1e-10));
    }

    #[test]
    fn constraint_steps_satisfy_armijo(
        radius_sq in 1.0..3.0f64,
        angle in 0.1..1.4f64,
        rosen in any::<bool>(),
    ) {
        let cp = if rosen { corpus::rosen_circle() } else { corpus::circle_interior() };
        let config = SolverConfig::default();
        let w0 = DVector::from_vec(vec![angle.cos(), angle.sin()]) * radius_sq.sqrt();
        let tr = restore_feasibility(&cp.problem, &w0, 1e-20, &config).unwrap();
        for (i, s) in tr.step_sizes.iter().enumerate() {
            let factor = 1.0 - config.tau * tr.alphas[i] * s;
            prop_assert!(factor < 1.0);
            prop_assert!(tr.h_norms[i + 1] <= factor * tr.h_norms[i]);
        }
    }

    #[test]
    fn rate_fit_recovers_power_laws(order in 1.0..3.0f64, start in -3.0..-0.5f64, constant in 0.1..10.0f64) {
        let mut errors = vec![10f64.powf(start)];
        for _ in 0..3 {
            let last = *errors.last().unwrap();
            errors.push(constant * last.powf(order));
        }
        prop_assume!(errors.iter().all(|&e| e > 1e-300));
        let fit = fit_convergence_order(&errors, 4).unwrap();
        prop_assert!((fit.order - order).abs() < 1e-6);
        prop_assert!((fit.constant - constant).abs() < 1e-6 * constant.max(1.0));
    }

    #[test]
    fn problem_text_round_trip(
        q_diag in prop::collection::vec(0.0..5.0f64, 3),
        c in prop::collection::vec(-2.0..2.0f64, 3),
        a in prop::collection::vec(-2.0..2.0f64, 3),
        b in -1.0..1.0f64,
        (lo, hi) in bounds(3),
    ) {
        let omega = Polyhedron::from_box(DVector::from_vec(lo), DVector::from_vec(hi)).unwrap();
        let mut definition = QuadraticNlpSpec::new(
            "round-trip",
            DMatrix::from_diagonal(&DVector::from_vec(q_diag)),
            DVector::from_vec(c),
            vec![QuadraticConstraint { p: DMatrix::identity(3, 3), a: DVector::from_vec(a), b }],
            omega,
        )
        .unwrap();
        definition.solution = Some(ReferenceSolution { x: DVector::zeros(3), lambda: DVector::zeros(1), mu: None });
        let parsed = QuadraticNlpSpec::parse(&definition.to_text()).unwrap();
        prop_assert_eq!(parsed, definition);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Log invariants of runs started near a solution with fitted multipliers.
    #[test]
    fn driver_log_invariants(cp in corpus_problem(), offset in prop::collection::vec(-0.07..0.07f64, 2)) {
        let p = &cp.problem;
        let config = SolverConfig::default();
        let mut x0 = cp.x_star() + DVector::from_vec(offset);
        p.omega().clamp_to_box(&mut x0);
        let fit = minimize_em0_regularized(p, &x0, config.gamma).unwrap();
        let sol = npasa_solve(p, &x0, &fit.nu, &fit.eta, &config).unwrap();
        prop_assert!(sol.report.em1 <= config.eps);
        let log = &sol.log;
        for pair in log.windows(2) {
            prop_assert!(pair[1].e <= pair[0].e);
        }
        let accepted: Vec<_> = log.iter().filter(|r| r.accepted).collect();
        for pair in accepted.windows(2) {
            if pair[1].phase == 2 {
                prop_assert!(pair[1].e1 <= config.theta * pair[0].e1);
            }
        }
        // trailing 75% (rounded down) of the outer iterations are phase two
        let outer: Vec<_> = log.iter().filter(|r| r.k >= 1).collect();
        let trailing = outer.len() * 3 / 4;
        prop_assert!(outer[outer.len() - trailing..].iter().all(|r| r.phase == 2));
    }
}

#[test]
fn circle_interior_cold_start_rate() {
    let cp = corpus::circle_interior();
    let sol = npasa_solve(&cp.problem, &cp.x0, &cp.lambda0, &DVector::zeros(4), &SolverConfig::default()).unwrap();
    let last = sol.log.last().unwrap();
    assert_eq!(last.phase, 2);
    let e1: Vec<f64> = sol.log.iter().filter(|r| r.accepted).map(|r| r.e1).collect();
    let fit = fit_convergence_order(&e1, 3).unwrap();
    assert!(fit.order >= 1.8, "{e1:?}");
}
