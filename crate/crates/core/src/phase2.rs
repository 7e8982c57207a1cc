//! Phase two: the local step.
//!
//! A local step is a constraint step (slack-penalized Gauss-Newton
//! restoration of `h(w) = 0` inside Ω) followed by a multiplier step
//! (regularized multiplier fit, η refinement, and penalized-Lagrangian
//! descent on the linearized constraint manifold). Either half can fail, in
//! which case the caller's iterate is handed back untouched.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::estimators::PointEval;
use crate::model::{Iterate, NlpProblem, SolverConfig};
use crate::subsolve::{
    least_distance_linearized, minimize_em0_regularized_at, minimize_em1_over_eta_at, minimize_over_polyhedron,
    SmoothObjective, SubsolveStatus,
};

/// `max(β², ‖h‖⁻²)`.
pub fn choose_penalty(h_norm: f64, beta: f64) -> Result<f64> {
    if !(beta >= 1.0) {
        return Err(Error::Precondition(format!("beta = {beta} must be >= 1")));
    }
    if !(h_norm > 0.0) {
        return Err(Error::Precondition("constraint norm is zero; nothing to restore".into()));
    }
    Ok((beta * beta).max(h_norm.powi(-2)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintOutcome {
    Success,
    /// The slack of the linearized problem was too large (`α_{i+1} < α`).
    AlphaFailure,
    /// Backtracking fell below `s_min`.
    BacktrackFailure,
    MaxIters,
}

#[derive(Clone, Debug)]
pub struct ConstraintStepTrace {
    /// `w₀ = x, w₁, …`; all in Ω.
    pub iterates: Vec<DVector<f64>>,
    /// `‖h(w_i)‖` for every iterate.
    pub h_norms: Vec<f64>,
    pub penalties: Vec<f64>,
    /// `‖y_{i+1}‖` of the linearized problem.
    pub slack_norms: Vec<f64>,
    /// `1 − √p_i·‖y_{i+1}‖`, the value compared against `α`.
    pub alphas: Vec<f64>,
    /// `1 − ‖y_{i+1}‖`, logged for comparison.
    pub alphas_unscaled: Vec<f64>,
    /// Accepted backtracking steps `s_i`.
    pub step_sizes: Vec<f64>,
    /// Target `θ·E_m1(x, λ, μ)` (floored) for `E_c(w)`.
    pub target: f64,
    pub outcome: ConstraintOutcome,
}

impl ConstraintStepTrace {
    pub fn iterations(&self) -> usize {
        self.step_sizes.len()
    }

    /// The restored point on success.
    pub fn output(&self) -> Option<&DVector<f64>> {
        match self.outcome {
            ConstraintOutcome::Success => self.iterates.last(),
            _ => None,
        }
    }
}

/// Restores feasibility from `x` until `E_c(w) ≤ θ·E_m1(x, λ, μ)`.
pub fn constraint_step(
    p: &NlpProblem,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
    config: &SolverConfig,
) -> Result<ConstraintStepTrace> {
    let pe = PointEval::new(p, x)?;
    let target = (config.theta * pe.em1(p.omega(), lambda, mu)?).max(config.guard_floor());
    restore_feasibility(p, x, target, config)
}

/// The constraint-step iteration from `x` with an explicit target for
/// `E_c(w) = ‖h(w)‖²`.
pub fn restore_feasibility(
    p: &NlpProblem,
    x: &DVector<f64>,
    target: f64,
    config: &SolverConfig,
) -> Result<ConstraintStepTrace> {
    let pe = PointEval::new(p, x)?;
    let omega = p.omega();
    let mut trace = ConstraintStepTrace {
        iterates: vec![x.clone()],
        h_norms: vec![pe.h.norm()],
        penalties: Vec::new(),
        slack_norms: Vec::new(),
        alphas: Vec::new(),
        alphas_unscaled: Vec::new(),
        step_sizes: Vec::new(),
        target,
        outcome: ConstraintOutcome::MaxIters,
    };
    let mut w = x.clone();
    let mut h = pe.h;
    loop {
        let h_norm = h.norm();
        if h_norm == 0.0 || h_norm * h_norm <= target {
            trace.outcome = ConstraintOutcome::Success;
            return Ok(trace);
        }
        if trace.step_sizes.len() >= config.max_constraint_iters {
            return Ok(trace);
        }
        let pen = choose_penalty(h_norm, config.beta)?;
        let jac = p.jacobian(&w);
        let ld = least_distance_linearized(omega, &w, &h, &jac, pen)?;
        let alpha = 1.0 - ld.scaled_slack.norm();
        trace.penalties.push(pen);
        trace.slack_norms.push(ld.y.norm());
        trace.alphas.push(alpha);
        trace.alphas_unscaled.push(1.0 - ld.y.norm());
        if alpha < config.alpha {
            trace.outcome = ConstraintOutcome::AlphaFailure;
            return Ok(trace);
        }
        let d = &ld.w_bar - &w;
        let mut s = 1.0;
        let accepted = loop {
            let mut trial = &w + &d * s;
            omega.clamp_to_box(&mut trial);
            let ht = p.constraints(&trial);
            if ht.iter().any(|v| !v.is_finite()) {
                return Err(Error::Evaluation("constraints in the constraint step".into()));
            }
            if ht.norm() <= (1.0 - config.tau * alpha * s) * h_norm {
                break Some((trial, ht));
            }
            s *= config.sigma;
            if s < config.s_min {
                break None;
            }
        };
        let Some((wn, hn)) = accepted else {
            trace.outcome = ConstraintOutcome::BacktrackFailure;
            return Ok(trace);
        };
        trace.step_sizes.push(s);
        trace.h_norms.push(hn.norm());
        trace.iterates.push(wn.clone());
        w = wn;
        h = hn;
    }
}

/// `L_p(z, ν) = f(z) + νᵀh(z) + p‖h(z) − h(z_i)‖²`.
pub struct PenalizedLagrangian<'a> {
    pub problem: &'a NlpProblem,
    pub nu: DVector<f64>,
    pub anchor: DVector<f64>,
    pub penalty: f64,
}

impl PenalizedLagrangian<'_> {
    fn weights(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.nu + (self.problem.constraints(x) - &self.anchor) * (2.0 * self.penalty)
    }
}

impl SmoothObjective for PenalizedLagrangian<'_> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let h = self.problem.constraints(x);
        self.problem.objective(x) + self.nu.dot(&h) + self.penalty * (h - &self.anchor).norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.problem.gradient(x) + self.problem.jacobian(x).tr_mul(&self.weights(x))
    }

    fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let base = self.problem.lagrangian_hessian(x, &self.weights(x))?;
        let j = self.problem.jacobian(x);
        Some(base + j.tr_mul(&j) * (2.0 * self.penalty))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MultiplierOutcome {
    Success,
    /// `E_m1` did not contract by δ, even after one penalty increase.
    DecreaseFailure,
    MaxIters,
    /// The penalized-Lagrangian subproblem could not be solved.
    SubsolverFailure,
}

#[derive(Clone, Debug)]
pub struct MultiplierStepTrace {
    /// `z₀ = w, z₁, …` (accepted iterates only).
    pub iterates: Vec<DVector<f64>>,
    pub nus: Vec<DVector<f64>>,
    /// Regularized-fit η for each iterate.
    pub etas: Vec<DVector<f64>>,
    /// Refined η′ for each iterate.
    pub etas_refined: Vec<DVector<f64>>,
    /// `E_m1(z_i, ν_i, η′_i)`.
    pub em1_values: Vec<f64>,
    /// Penalty used for each accepted descent.
    pub penalties: Vec<f64>,
    /// `‖∇h(z_i)(z_{i+1} − z_i)‖` for each accepted descent.
    pub manifold_residuals: Vec<f64>,
    pub inner_status: Vec<SubsolveStatus>,
    /// Number of δ-test failures recovered by raising the penalty.
    pub penalty_increases: usize,
    pub target: f64,
    pub outcome: MultiplierOutcome,
}

impl MultiplierStepTrace {
    pub fn iterations(&self) -> usize {
        self.iterates.len() - 1
    }

    /// `(z, ν, η′)` on success.
    pub fn output(&self) -> Option<Iterate> {
        match self.outcome {
            MultiplierOutcome::Success => Some(Iterate {
                x: self.iterates.last()?.clone(),
                lambda: self.nus.last()?.clone(),
                mu: self.etas_refined.last()?.clone(),
            }),
            _ => None,
        }
    }
}

struct Estimate {
    nu: DVector<f64>,
    eta: DVector<f64>,
    eta_refined: DVector<f64>,
    em1: f64,
    ec: f64,
}

fn estimate_multipliers(p: &NlpProblem, z: &DVector<f64>, config: &SolverConfig) -> Result<Estimate> {
    let pe = PointEval::new(p, z)?;
    let fit = minimize_em0_regularized_at(&pe, p.omega(), config.gamma)?;
    let refined = minimize_em1_over_eta_at(&pe, p.omega(), &fit.nu, Some(&fit.eta), config.exact_eta_enumeration)?;
    Ok(Estimate {
        nu: fit.nu,
        eta: fit.eta,
        eta_refined: refined.eta,
        em1: refined.em1,
        ec: pe.ec(),
    })
}

/// Multiplier step from `w ∈ Ω` until `E_m1 ≤ target` (floored).
pub fn multiplier_step(
    p: &NlpProblem,
    w: &DVector<f64>,
    target: f64,
    config: &SolverConfig,
) -> Result<MultiplierStepTrace> {
    check_len("multiplier step start", p.dim(), w.len())?;
    let target = target.max(config.guard_floor());
    let mut est = estimate_multipliers(p, w, config)?;
    let mut trace = MultiplierStepTrace {
        iterates: vec![w.clone()],
        nus: vec![est.nu.clone()],
        etas: vec![est.eta.clone()],
        etas_refined: vec![est.eta_refined.clone()],
        em1_values: vec![est.em1],
        penalties: Vec::new(),
        manifold_residuals: Vec::new(),
        inner_status: Vec::new(),
        penalty_increases: 0,
        target,
        outcome: MultiplierOutcome::MaxIters,
    };
    let mut z = w.clone();
    loop {
        if est.em1 <= target {
            trace.outcome = MultiplierOutcome::Success;
            return Ok(trace);
        }
        if trace.iterations() >= config.max_multiplier_iters {
            return Ok(trace);
        }
        let jac = p.jacobian(&z);
        let manifold = p.omega().with_equality_rows(&jac, &(&jac * &z))?;
        let tol = config.inner_tol.min(0.01 * (est.em1 + est.ec)).max(1e-14);
        let anchor = p.constraints(&z);
        let mut penalty = config.p_init;
        let mut retried = false;
        let next = loop {
            let obj = PenalizedLagrangian {
                problem: p,
                nu: est.nu.clone(),
                anchor: anchor.clone(),
                penalty,
            };
            let rep = match minimize_over_polyhedron(&obj, &manifold, &z, tol, config.max_inner_iters) {
                Ok(rep) => rep,
                Err(Error::Evaluation(e)) => return Err(Error::Evaluation(e)),
                Err(_) => {
                    trace.outcome = MultiplierOutcome::SubsolverFailure;
                    return Ok(trace);
                }
            };
            let cand = estimate_multipliers(p, &rep.minimizer, config)?;
            if cand.em1 <= config.delta * est.em1 {
                break (rep, cand, penalty);
            }
            if retried {
                trace.outcome = MultiplierOutcome::DecreaseFailure;
                return Ok(trace);
            }
            retried = true;
            trace.penalty_increases += 1;
            penalty *= 10.0;
        };
        let (rep, cand, pen) = next;
        trace.manifold_residuals.push((&jac * (&rep.minimizer - &z)).norm());
        trace.inner_status.push(rep.status);
        trace.penalties.push(pen);
        z = rep.minimizer;
        trace.iterates.push(z.clone());
        trace.nus.push(cand.nu.clone());
        trace.etas.push(cand.eta.clone());
        trace.etas_refined.push(cand.eta_refined.clone());
        trace.em1_values.push(cand.em1);
        est = cand;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalFailure {
    Constraint(ConstraintOutcome),
    Multiplier(MultiplierOutcome),
}

#[derive(Clone, Debug)]
pub struct LocalStep {
    /// The new triple, or the input unchanged when a half failed.
    pub iterate: Iterate,
    pub failure: Option<LocalFailure>,
    pub constraint: ConstraintStepTrace,
    pub multiplier: Option<MultiplierStepTrace>,
}

/// One local step from `(x, λ, μ)`.
pub fn local_step(p: &NlpProblem, iterate: &Iterate, config: &SolverConfig) -> Result<LocalStep> {
    let cs = constraint_step(p, &iterate.x, &iterate.lambda, &iterate.mu, config)?;
    let Some(w) = cs.output().cloned() else {
        return Ok(LocalStep {
            iterate: iterate.clone(),
            failure: Some(LocalFailure::Constraint(cs.outcome)),
            constraint: cs,
            multiplier: None,
        });
    };
    let ec_w = p.constraints(&w).norm_squared();
    let ms = multiplier_step(p, &w, config.theta * ec_w, config)?;
    match ms.output() {
        Some(out) => Ok(LocalStep {
            iterate: out,
            failure: None,
            constraint: cs,
            multiplier: Some(ms),
        }),
        None => Ok(LocalStep {
            iterate: iterate.clone(),
            failure: Some(LocalFailure::Multiplier(ms.outcome)),
            constraint: cs,
            multiplier: Some(ms),
        }),
    }
}
