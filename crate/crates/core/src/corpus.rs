//! Built-in test problems with analytic KKT triples.
//!
//! Every problem lives in ℝ² over the nonnegative orthant, so the stacked
//! multiplier vector is `[μ(x₁ ≥ 0), μ(x₂ ≥ 0), μ(x₁ ≤ ∞), μ(x₂ ≤ ∞)]`.
//!
//! | name | objective | constraint | x* | λ* |
//! |---|---|---|---|---|
//! | `lin-eq-box` | ½‖x‖² | x₁ + x₂ = 2 | (1, 1) | −1 |
//! | `circle-min` | x₁ + x₂ | x₁² + x₂² = 2 | (√2, 0) or (0, √2) | −1/(2√2) |
//! | `circle-interior` | −(x₁ + x₂) | x₁² + x₂² = 2 | (1, 1) | 1/2 |
//! | `rosen-circle` | (1 − x₁)² + 100(x₂ − x₁²)² | x₁² + x₂² = 2 | (1, 1) | 0 |

use std::sync::Arc;

use nalgebra::{dvector, DMatrix, DVector};

use crate::model::{
    NlpProblem, Polyhedron, QuadraticConstraint, QuadraticNlpSpec, ReferenceSolution,
};

/// A corpus entry.
#[derive(Clone, Debug)]
pub struct CorpusProblem {
    pub name: &'static str,
    pub problem: NlpProblem,
    /// File-format description; `None` for problems outside the quadratic family.
    pub definition: Option<QuadraticNlpSpec>,
    /// Every analytic minimizer, each with its multipliers.
    pub solutions: Vec<(DVector<f64>, DVector<f64>, DVector<f64>)>,
    /// Documented cold start.
    pub x0: DVector<f64>,
    pub lambda0: DVector<f64>,
}

impl CorpusProblem {
    pub fn x_star(&self) -> &DVector<f64> {
        &self.solutions[0].0
    }

    pub fn lambda_star(&self) -> &DVector<f64> {
        &self.solutions[0].1
    }

    pub fn mu_star(&self) -> &DVector<f64> {
        &self.solutions[0].2
    }

    /// Distance from `x` to the nearest analytic minimizer.
    pub fn distance_to_solution(&self, x: &DVector<f64>) -> f64 {
        self.solutions
            .iter()
            .map(|s| (x - &s.0).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Index of the analytic minimizer closest to `x`.
    pub fn nearest_solution(&self, x: &DVector<f64>) -> usize {
        let mut best = 0;
        for (i, s) in self.solutions.iter().enumerate() {
            if (x - &s.0).norm() < (x - &self.solutions[best].0).norm() {
                best = i;
            }
        }
        best
    }
}

fn orthant() -> Polyhedron {
    Polyhedron::from_box(dvector![0.0, 0.0], dvector![f64::INFINITY, f64::INFINITY])
        .expect("orthant is valid")
}

fn circle() -> QuadraticConstraint {
    QuadraticConstraint {
        p: DMatrix::identity(2, 2) * 2.0,
        a: DVector::zeros(2),
        b: -2.0,
    }
}

fn quadratic_entry(
    name: &'static str,
    q: DMatrix<f64>,
    c: DVector<f64>,
    constraint: QuadraticConstraint,
    solutions: Vec<(DVector<f64>, DVector<f64>, DVector<f64>)>,
    x0: DVector<f64>,
    lambda0: DVector<f64>,
) -> CorpusProblem {
    let mut definition = QuadraticNlpSpec::new(name, q, c, vec![constraint], orthant())
        .expect("corpus data is valid");
    definition.x0 = Some(x0.clone());
    definition.lambda0 = Some(lambda0.clone());
    let (xs, ls, ms) = solutions[0].clone();
    definition.solution = Some(ReferenceSolution {
        x: xs,
        lambda: ls,
        mu: Some(ms),
    });
    CorpusProblem {
        name,
        problem: definition.to_problem(),
        definition: Some(definition),
        solutions,
        x0,
        lambda0,
    }
}

pub fn lin_eq_box() -> CorpusProblem {
    quadratic_entry(
        "lin-eq-box",
        DMatrix::identity(2, 2),
        DVector::zeros(2),
        QuadraticConstraint {
            p: DMatrix::zeros(2, 2),
            a: dvector![1.0, 1.0],
            b: -2.0,
        },
        vec![(dvector![1.0, 1.0], dvector![-1.0], DVector::zeros(4))],
        dvector![2.0, 0.0],
        dvector![0.0],
    )
}

pub fn circle_min() -> CorpusProblem {
    let r2 = 2f64.sqrt();
    let lam = -1.0 / (2.0 * r2);
    quadratic_entry(
        "circle-min",
        DMatrix::zeros(2, 2),
        dvector![1.0, 1.0],
        circle(),
        vec![
            (dvector![r2, 0.0], dvector![lam], dvector![0.0, 1.0, 0.0, 0.0]),
            (dvector![0.0, r2], dvector![lam], dvector![1.0, 0.0, 0.0, 0.0]),
        ],
        dvector![2.0, 0.5],
        dvector![0.0],
    )
}

pub fn circle_interior() -> CorpusProblem {
    quadratic_entry(
        "circle-interior",
        DMatrix::zeros(2, 2),
        dvector![-1.0, -1.0],
        circle(),
        vec![(dvector![1.0, 1.0], dvector![0.5], DVector::zeros(4))],
        dvector![0.9, 1.05],
        dvector![0.4],
    )
}

/// Rosenbrock's function on the circle of radius √2, with an exact Hessian.
pub fn rosen_circle() -> CorpusProblem {
    let f = Arc::new(|x: &DVector<f64>| {
        let (a, b) = (1.0 - x[0], x[1] - x[0] * x[0]);
        a * a + 100.0 * b * b
    });
    let grad = Arc::new(|x: &DVector<f64>| {
        let b = x[1] - x[0] * x[0];
        dvector![-2.0 * (1.0 - x[0]) - 400.0 * x[0] * b, 200.0 * b]
    });
    let h = Arc::new(|x: &DVector<f64>| dvector![x[0] * x[0] + x[1] * x[1] - 2.0]);
    let jac = Arc::new(|x: &DVector<f64>| DMatrix::from_row_slice(1, 2, &[2.0 * x[0], 2.0 * x[1]]));
    let hess = Arc::new(|x: &DVector<f64>, w: &DVector<f64>| {
        let b = x[1] - x[0] * x[0];
        let h11 = 2.0 - 400.0 * b + 800.0 * x[0] * x[0];
        let h12 = -400.0 * x[0];
        DMatrix::from_row_slice(2, 2, &[h11 + 2.0 * w[0], h12, h12, 200.0 + 2.0 * w[0]])
    });
    let problem =
        NlpProblem::new("rosen-circle", 1, orthant(), f, grad, h, jac).with_hessian(hess);
    CorpusProblem {
        name: "rosen-circle",
        problem,
        definition: None,
        solutions: vec![(dvector![1.0, 1.0], dvector![0.0], DVector::zeros(4))],
        x0: dvector![0.5, 1.2],
        lambda0: dvector![0.0],
    }
}

/// All corpus problems in a fixed order.
pub fn corpus() -> Vec<CorpusProblem> {
    vec![lin_eq_box(), circle_min(), circle_interior(), rosen_circle()]
}

pub fn names() -> Vec<&'static str> {
    vec!["lin-eq-box", "circle-min", "circle-interior", "rosen-circle"]
}

pub fn by_name(name: &str) -> Option<CorpusProblem> {
    match name {
        "lin-eq-box" => Some(lin_eq_box()),
        "circle-min" => Some(circle_min()),
        "circle-interior" => Some(circle_interior()),
        "rosen-circle" => Some(rosen_circle()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{licq_rank, strict_complementarity};
    use crate::estimators::e1;
    use crate::model::load_problem;

    #[test]
    fn analytic_triples_zero_e1() {
        for cp in corpus() {
            for (x, l, m) in &cp.solutions {
                let v = e1(&cp.problem, x, l, m).unwrap();
                assert!(v <= 1e-10, "{}: E1 = {v:e}", cp.name);
            }
        }
    }

    #[test]
    fn analytic_triples_satisfy_licq() {
        for cp in corpus() {
            for (x, _, _) in &cp.solutions {
                let d = licq_rank(&cp.problem, x, 1e-9).unwrap();
                assert!(d.full_rank, "{}", cp.name);
            }
        }
    }

    #[test]
    fn circle_min_is_strictly_complementary() {
        let cp = circle_min();
        for (x, _, mu) in &cp.solutions {
            assert!(strict_complementarity(&cp.problem, x, mu, 1e-9).unwrap().holds);
        }
    }

    #[test]
    fn lin_eq_box_file_round_trip() {
        let cp = lin_eq_box();
        let text = cp.definition.as_ref().unwrap().to_text();
        let p = load_problem(&text).unwrap();
        assert_eq!((p.dim(), p.num_eq()), (2, 1));
        let x = dvector![0.25, 3.0];
        assert_eq!(p.constraints(&x)[0], 0.25 + 3.0 - 2.0);
    }

    #[test]
    fn lookup_by_name() {
        for name in names() {
            assert_eq!(by_name(name).unwrap().name, name);
        }
        assert!(by_name("nope").is_none());
    }
}
