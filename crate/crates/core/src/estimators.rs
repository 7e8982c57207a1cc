//! KKT error estimators.
//!
//! With `L(x, λ, μ) = f(x) + λᵀh(x) + μᵀr(x)` and `Φ` the componentwise
//! minimum,
//!
//! ```text
//!   E_m0 = ‖∇ₓL‖² − μᵀr(x)        E_m1 = ‖∇ₓL‖² + ‖Φ(−r(x), μ)‖²
//!   E_c  = ‖h(x)‖²                 E_j  = √(E_mj + E_c)
//! ```
//!
//! `E_0` is only defined for `x ∈ Ω` and `μ ≥ 0`; `E_1` accepts any μ.
//! Stacked rows with infinite bounds contribute nothing as long as their
//! multiplier is zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{NlpProblem, Polyhedron};

/// Estimator values at one primal-dual point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    /// `None` outside the domain of `E_0`.
    pub e0: Option<f64>,
    pub e1: f64,
    pub em0: Option<f64>,
    pub em1: f64,
    pub ec: f64,
    pub grad_lagrangian_norm_sq: f64,
}

/// Componentwise minimum. An infinite `a_i` (an inactive infinite bound)
/// yields `b_i`.
pub fn phi_min(a: &DVector<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("phi_min", a.len(), b.len())?;
    Ok(a.zip_map(b, |x, y| if x.is_infinite() && x > 0.0 { y } else { x.min(y) }))
}

/// Problem data evaluated once at a point, shared by every estimator.
#[derive(Clone, Debug)]
pub struct PointEval {
    pub x: DVector<f64>,
    pub grad_f: DVector<f64>,
    pub h: DVector<f64>,
    pub jac_h: DMatrix<f64>,
    /// Stacked residual; −∞ on rows with infinite bounds.
    pub r: DVector<f64>,
}

impl PointEval {
    pub fn new(p: &NlpProblem, x: &DVector<f64>) -> Result<Self> {
        check_len("evaluation point", p.dim(), x.len())?;
        let grad_f = p.gradient(x);
        let h = p.constraints(x);
        let jac_h = p.jacobian(x);
        if grad_f
            .iter()
            .chain(h.iter())
            .chain(jac_h.iter())
            .chain(x.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Evaluation(format!("problem `{}`", p.name())));
        }
        let r = p.omega().stacked_residual(x)?;
        Ok(Self {
            x: x.clone(),
            grad_f,
            h,
            jac_h,
            r,
        })
    }

    /// `∇f + J_hᵀλ + J_rᵀμ`.
    pub fn grad_lagrangian(
        &self,
        omega: &Polyhedron,
        lambda: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_len("lambda", self.h.len(), lambda.len())?;
        Ok(&self.grad_f + self.jac_h.tr_mul(lambda) + omega.stacked_transpose_mul(mu)?)
    }

    pub fn ec(&self) -> f64 {
        self.h.norm_squared()
    }

    /// `‖Φ(−r, μ)‖²`.
    pub fn complementarity_sq(&self, mu: &DVector<f64>) -> Result<f64> {
        check_len("mu", self.r.len(), mu.len())?;
        Ok(phi_min(&(-&self.r), mu)?.norm_squared())
    }

    pub fn em1(&self, omega: &Polyhedron, lambda: &DVector<f64>, mu: &DVector<f64>) -> Result<f64> {
        let g = self.grad_lagrangian(omega, lambda, mu)?;
        Ok(g.norm_squared() + self.complementarity_sq(mu)?)
    }

    /// `E_m0` without the domain check on x; requires μ ≥ 0 and μ = 0 on
    /// infinite-bound rows.
    pub fn em0(&self, omega: &Polyhedron, lambda: &DVector<f64>, mu: &DVector<f64>) -> Result<f64> {
        let g = self.grad_lagrangian(omega, lambda, mu)?;
        Ok(g.norm_squared() + self.slack_term(mu)?)
    }

    /// `−μᵀr` over finite rows.
    fn slack_term(&self, mu: &DVector<f64>) -> Result<f64> {
        check_len("mu", self.r.len(), mu.len())?;
        let mut s = 0.0;
        for (i, (&ri, &mi)) in self.r.iter().zip(mu.iter()).enumerate() {
            if mi < 0.0 || mi.is_nan() {
                return Err(Error::Domain(format!("mu[{i}] = {mi} is negative")));
            }
            if ri.is_finite() {
                s -= mi * ri;
            } else if mi != 0.0 {
                return Err(Error::Domain(format!(
                    "mu[{i}] = {mi} is nonzero on an infinite bound"
                )));
            }
        }
        Ok(s)
    }

    /// All estimators. `tol` is the Ω-membership tolerance for `E_0`.
    pub fn report(
        &self,
        omega: &Polyhedron,
        lambda: &DVector<f64>,
        mu: &DVector<f64>,
        tol: f64,
    ) -> Result<EstimatorReport> {
        let g = self.grad_lagrangian(omega, lambda, mu)?;
        let gl = g.norm_squared();
        let ec = self.ec();
        let em1 = gl + self.complementarity_sq(mu)?;
        let in_domain = self.r.iter().all(|&v| v <= tol);
        let em0 = if in_domain {
            self.slack_term(mu).ok().map(|s| gl + s)
        } else {
            None
        };
        Ok(EstimatorReport {
            e0: em0.map(|v| (v + ec).max(0.0).sqrt()),
            e1: (em1 + ec).sqrt(),
            em0,
            em1,
            ec,
            grad_lagrangian_norm_sq: gl,
        })
    }
}

pub fn lagrangian_gradient(
    p: &NlpProblem,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len("lambda", p.num_eq(), lambda.len())?;
    check_len("mu", p.num_ineq(), mu.len())?;
    PointEval::new(p, x)?.grad_lagrangian(p.omega(), lambda, mu)
}

pub fn e_c(p: &NlpProblem, x: &DVector<f64>) -> Result<f64> {
    check_len("evaluation point", p.dim(), x.len())?;
    Ok(p.constraints(x).norm_squared())
}

pub fn em1(p: &NlpProblem, x: &DVector<f64>, lambda: &DVector<f64>, mu: &DVector<f64>) -> Result<f64> {
    PointEval::new(p, x)?.em1(p.omega(), lambda, mu)
}

pub fn e1(p: &NlpProblem, x: &DVector<f64>, lambda: &DVector<f64>, mu: &DVector<f64>) -> Result<f64> {
    let pe = PointEval::new(p, x)?;
    Ok((pe.em1(p.omega(), lambda, mu)? + pe.ec()).sqrt())
}

/// `E_0`, failing with [`Error::Domain`] when `x ∉ Ω` (beyond `tol`) or μ < 0.
pub fn e0(
    p: &NlpProblem,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
    tol: f64,
) -> Result<f64> {
    check_len("mu", p.num_ineq(), mu.len())?;
    if let Some(i) = mu.iter().position(|&v| v < 0.0 || v.is_nan()) {
        return Err(Error::Domain(format!("mu[{i}] = {} is negative", mu[i])));
    }
    let pe = PointEval::new(p, x)?;
    if let Some(i) = pe.r.iter().position(|&v| v > tol) {
        return Err(Error::Domain(format!(
            "x violates stacked row {i} by {}",
            pe.r[i]
        )));
    }
    Ok((pe.em0(p.omega(), lambda, mu)? + pe.ec()).max(0.0).sqrt())
}

/// Full report at `(x, λ, μ)`.
pub fn estimate(
    p: &NlpProblem,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
    tol: f64,
) -> Result<EstimatorReport> {
    check_len("mu", p.num_ineq(), mu.len())?;
    PointEval::new(p, x)?.report(p.omega(), lambda, mu, tol)
}
