//! Phase one: the augmented-Lagrangian global step.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::model::{Iterate, NlpProblem, SolverConfig};
use crate::projection::mu_of_x;
use crate::subsolve::{minimize_over_polyhedron, SmoothObjective, SubsolveStatus};

/// `L_q(x, ν) = f(x) + νᵀh(x) + q‖h(x)‖²` as a function of x.
pub struct AugmentedLagrangian<'a> {
    pub problem: &'a NlpProblem,
    pub q: f64,
    pub nu: DVector<f64>,
}

impl SmoothObjective for AugmentedLagrangian<'_> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let h = self.problem.constraints(x);
        self.problem.objective(x) + self.nu.dot(&h) + self.q * h.norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let h = self.problem.constraints(x);
        let w = &self.nu + h * (2.0 * self.q);
        self.problem.gradient(x) + self.problem.jacobian(x).tr_mul(&w)
    }

    fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let h = self.problem.constraints(x);
        let w = &self.nu + h * (2.0 * self.q);
        let base = self.problem.lagrangian_hessian(x, &w)?;
        let j = self.problem.jacobian(x);
        Some(base + j.tr_mul(&j) * (2.0 * self.q))
    }
}

/// Clamps each component of λ into `[−λ̄, λ̄]`.
pub fn safeguard_lambda(lambda: &DVector<f64>, lambda_bar: f64) -> DVector<f64> {
    lambda.map(|v| v.clamp(-lambda_bar, lambda_bar))
}

/// Output of one global step.
#[derive(Clone, Debug)]
pub struct GlobalStep {
    pub iterate: Iterate,
    /// The safeguarded multiplier used inside `L_q`.
    pub lambda_bar: DVector<f64>,
    pub pg_norm: f64,
    pub inner_iterations: usize,
    pub status: SubsolveStatus,
}

/// Minimizes `L_q(·, λ̄)` over Ω from `iterate.x`, then updates
/// `λ′ = λ̄ + 2q·h(x′)` and reads μ′ off the unit projected-gradient step.
pub fn global_step(p: &NlpProblem, iterate: &Iterate, q: f64, config: &SolverConfig) -> Result<GlobalStep> {
    check_len("iterate x", p.dim(), iterate.x.len())?;
    check_len("iterate lambda", p.num_eq(), iterate.lambda.len())?;
    if !(q >= 1.0) || !q.is_finite() {
        return Err(Error::Precondition(format!("penalty q = {q} must be >= 1")));
    }
    let lambda_bar = safeguard_lambda(&iterate.lambda, config.lambda_bar);
    let obj = AugmentedLagrangian {
        problem: p,
        q,
        nu: lambda_bar.clone(),
    };
    let rep = minimize_over_polyhedron(&obj, p.omega(), &iterate.x, config.inner_tol, config.max_inner_iters)?;
    let x = rep.minimizer;
    let h = p.constraints(&x);
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("constraints after the global step".into()));
    }
    let lambda = &lambda_bar + h * (2.0 * q);
    let mu = mu_of_x(p, &x, &lambda_bar, q)?;
    Ok(GlobalStep {
        iterate: Iterate { x, lambda, mu },
        lambda_bar,
        pg_norm: rep.pg_norm,
        inner_iterations: rep.iterations,
        status: rep.status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::model::{Polyhedron, QuadraticConstraint, QuadraticNlpSpec};
    use crate::oracle::{brute_force_qp, finite_diff_gradient, DenseQp};
    use nalgebra::dvector;

    #[test]
    fn safeguard_examples() {
        assert_eq!(safeguard_lambda(&dvector![5.0, -0.3], 1.0), dvector![1.0, -0.3]);
        assert_eq!(safeguard_lambda(&dvector![0.2, -0.3], 1.0), dvector![0.2, -0.3]);
        assert_eq!(safeguard_lambda(&dvector![-2.0], 1.0), dvector![-1.0]);
    }

    #[test]
    fn augmented_lagrangian_gradient_matches_differences() {
        for cp in corpus::corpus() {
            let al = AugmentedLagrangian {
                problem: &cp.problem,
                q: 3.0,
                nu: DVector::from_element(cp.problem.num_eq(), 0.7),
            };
            let x = DVector::from_element(cp.problem.dim(), 0.8);
            let fd = finite_diff_gradient(|y| al.value(y), &x, 1e-6).unwrap();
            let g = al.gradient(&x);
            assert!((g - fd).amax() < 1e-6, "{}", cp.name);
        }
    }

    #[test]
    fn lin_eq_box_step_matches_oracle() {
        let cp = corpus::lin_eq_box();
        let p = &cp.problem;
        let it = Iterate::primal(p, dvector![2.0, 0.0]).unwrap();
        let q = 4.0;
        let gs = global_step(p, &it, q, &SolverConfig::default()).unwrap();
        // ½‖x‖² + 4(x₁ + x₂ − 2)² is a QP with H = I + 8·11ᵀ, g = −16·1
        let h = DMatrix::identity(2, 2) + DMatrix::from_element(2, 2, 8.0);
        let oracle = brute_force_qp(&DenseQp::new(h, dvector![-16.0, -16.0], p.omega().clone()).unwrap()).unwrap();
        assert!((&gs.iterate.x - &oracle.x).norm() < 1e-9);
        let expected = 8.0 * p.constraints(&gs.iterate.x)[0];
        assert_eq!(gs.iterate.lambda[0], expected);
        assert!((gs.iterate.lambda[0] + 16.0 / 17.0).abs() < 1e-9);
        assert!(gs.iterate.mu.iter().all(|&m| m >= 0.0));
    }

    #[test]
    fn kkt_point_is_fixed() {
        for cp in corpus::corpus() {
            let it = Iterate::new(&cp.problem, cp.x_star().clone(), cp.lambda_star().clone(), cp.mu_star().clone())
                .unwrap();
            let gs = global_step(&cp.problem, &it, 10.0, &SolverConfig::default()).unwrap();
            assert!((&gs.iterate.x - &it.x).amax() < 1e-8, "{}", cp.name);
            assert!((&gs.iterate.lambda - &it.lambda).amax() < 1e-8, "{}", cp.name);
            assert!((&gs.iterate.mu - &it.mu).amax() < 1e-8, "{}", cp.name);
        }
    }

    #[test]
    fn multiplier_update_uses_safeguarded_value() {
        // Ω pins x to 0.25 so h(x′) = 0.25 regardless of the objective
        let p = QuadraticNlpSpec::new(
            "pinned",
            DMatrix::zeros(1, 1),
            dvector![1.0],
            vec![QuadraticConstraint {
                p: DMatrix::zeros(1, 1),
                a: dvector![1.0],
                b: 0.0,
            }],
            Polyhedron::from_box(dvector![0.25], dvector![0.25]).unwrap(),
        )
        .unwrap()
        .to_problem();
        let it = Iterate::primal(&p, dvector![0.25]).unwrap();
        let it = Iterate { lambda: dvector![5.0], ..it };
        let cfg = SolverConfig {
            lambda_bar: 1.0,
            ..SolverConfig::default()
        };
        let gs = global_step(&p, &it, 4.0, &cfg).unwrap();
        assert_eq!(gs.iterate.lambda[0], 3.0);
        assert_eq!(gs.lambda_bar[0], 1.0);
    }

    #[test]
    fn rejects_small_penalty() {
        let cp = corpus::lin_eq_box();
        let it = Iterate::primal(&cp.problem, dvector![1.0, 1.0]).unwrap();
        assert!(matches!(
            global_step(&cp.problem, &it, 0.5, &SolverConfig::default()),
            Err(Error::Precondition(_))
        ));
    }
}
