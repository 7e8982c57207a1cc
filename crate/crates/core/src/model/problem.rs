use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::Polyhedron;
use crate::error::{check_len, Error, Result};

pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// `(x, w) ↦ ∇²f(x) + Σ_j w_j ∇²h_j(x)`.
pub type HessianFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Evaluation counters shared by clones of a problem.
#[derive(Debug, Default)]
pub struct EvalCounters {
    objective: AtomicUsize,
    gradient: AtomicUsize,
    constraints: AtomicUsize,
    jacobian: AtomicUsize,
    hessian: AtomicUsize,
}

/// Snapshot of [`EvalCounters`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EvalCounts {
    pub objective: usize,
    pub gradient: usize,
    pub constraints: usize,
    pub jacobian: usize,
    pub hessian: usize,
}

impl EvalCounts {
    pub fn since(&self, earlier: &EvalCounts) -> EvalCounts {
        EvalCounts {
            objective: self.objective - earlier.objective,
            gradient: self.gradient - earlier.gradient,
            constraints: self.constraints - earlier.constraints,
            jacobian: self.jacobian - earlier.jacobian,
            hessian: self.hessian - earlier.hessian,
        }
    }
}

/// A nonlinear program
///
/// ```text
///   min f(x)  s.t.  h(x) = 0,  x ∈ Ω
/// ```
///
/// with `h : ℝⁿ → ℝ^ℓ` and Ω a [`Polyhedron`]. Evaluators must be
/// deterministic and free of side effects; the optional Hessian callback
/// enables exact Newton steps in the inner solvers (finite differences of
/// the gradient are used otherwise).
#[derive(Clone)]
pub struct NlpProblem {
    name: String,
    n: usize,
    ell: usize,
    f: ScalarFn,
    grad_f: VectorFn,
    h: VectorFn,
    jac_h: MatrixFn,
    hessian: Option<HessianFn>,
    omega: Polyhedron,
    counters: Arc<EvalCounters>,
}

impl fmt::Debug for NlpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NlpProblem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("ell", &self.ell)
            .field("has_hessian", &self.hessian.is_some())
            .field("omega", &self.omega)
            .finish()
    }
}

impl NlpProblem {
    pub fn new(
        name: impl Into<String>,
        ell: usize,
        omega: Polyhedron,
        f: ScalarFn,
        grad_f: VectorFn,
        h: VectorFn,
        jac_h: MatrixFn,
    ) -> Self {
        Self {
            name: name.into(),
            n: omega.dim(),
            ell,
            f,
            grad_f,
            h,
            jac_h,
            hessian: None,
            omega,
            counters: Arc::new(EvalCounters::default()),
        }
    }

    pub fn with_hessian(mut self, hessian: HessianFn) -> Self {
        self.hessian = Some(hessian);
        self
    }

    /// Same evaluators over a different polyhedron.
    pub fn with_omega(&self, omega: Polyhedron) -> Result<Self> {
        check_len("replacement polyhedron", self.n, omega.dim())?;
        let mut out = self.clone();
        out.omega = omega;
        Ok(out)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn num_eq(&self) -> usize {
        self.ell
    }

    pub fn omega(&self) -> &Polyhedron {
        &self.omega
    }

    /// Number of stacked polyhedral inequalities.
    pub fn num_ineq(&self) -> usize {
        self.omega.num_stacked()
    }

    pub fn has_hessian(&self) -> bool {
        self.hessian.is_some()
    }

    pub fn counts(&self) -> EvalCounts {
        let c = &self.counters;
        EvalCounts {
            objective: c.objective.load(Ordering::Relaxed),
            gradient: c.gradient.load(Ordering::Relaxed),
            constraints: c.constraints.load(Ordering::Relaxed),
            jacobian: c.jacobian.load(Ordering::Relaxed),
            hessian: c.hessian.load(Ordering::Relaxed),
        }
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.counters.objective.fetch_add(1, Ordering::Relaxed);
        (self.f)(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.counters.gradient.fetch_add(1, Ordering::Relaxed);
        let g = (self.grad_f)(x);
        debug_assert_eq!(g.len(), self.n);
        g
    }

    pub fn constraints(&self, x: &DVector<f64>) -> DVector<f64> {
        self.counters.constraints.fetch_add(1, Ordering::Relaxed);
        let h = (self.h)(x);
        debug_assert_eq!(h.len(), self.ell);
        h
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.counters.jacobian.fetch_add(1, Ordering::Relaxed);
        let j = (self.jac_h)(x);
        debug_assert_eq!(j.shape(), (self.ell, self.n));
        j
    }

    /// `∇²f(x) + Σ_j w_j ∇²h_j(x)` when an exact Hessian is available.
    pub fn lagrangian_hessian(&self, x: &DVector<f64>, w: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.hessian.as_ref().map(|hess| {
            self.counters.hessian.fetch_add(1, Ordering::Relaxed);
            hess(x, w)
        })
    }

    /// Checks evaluator output shapes and finiteness at `x`.
    pub fn validate_at(&self, x: &DVector<f64>) -> Result<()> {
        check_len("problem point", self.n, x.len())?;
        let g = self.gradient(x);
        check_len("objective gradient", self.n, g.len())?;
        let h = self.constraints(x);
        check_len("constraint values", self.ell, h.len())?;
        let j = self.jacobian(x);
        if j.shape() != (self.ell, self.n) {
            return Err(Error::InvalidProblem(format!(
                "jacobian has shape {:?}, expected ({}, {})",
                j.shape(),
                self.ell,
                self.n
            )));
        }
        if !self.objective(x).is_finite()
            || g.iter().chain(h.iter()).chain(j.iter()).any(|v| !v.is_finite())
        {
            return Err(Error::Evaluation(format!("problem `{}`", self.name)));
        }
        Ok(())
    }
}

/// A primal-dual triple `(x, λ, μ)`; μ is indexed over the stacked inequalities.
#[derive(Clone, Debug, PartialEq)]
pub struct Iterate {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub mu: DVector<f64>,
}

impl Iterate {
    /// Validated constructor: shapes must match `p` and μ must be nonnegative.
    pub fn new(p: &NlpProblem, x: DVector<f64>, lambda: DVector<f64>, mu: DVector<f64>) -> Result<Self> {
        check_len("iterate x", p.dim(), x.len())?;
        check_len("iterate lambda", p.num_eq(), lambda.len())?;
        check_len("iterate mu", p.num_ineq(), mu.len())?;
        if let Some(i) = mu.iter().position(|&v| v < 0.0 || v.is_nan()) {
            return Err(Error::Domain(format!("mu[{i}] = {} is negative", mu[i])));
        }
        Ok(Self { x, lambda, mu })
    }

    /// `x` with zero multipliers.
    pub fn primal(p: &NlpProblem, x: DVector<f64>) -> Result<Self> {
        let (ell, m) = (p.num_eq(), p.num_ineq());
        Self::new(p, x, DVector::zeros(ell), DVector::zeros(m))
    }
}
