use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the two-phase solver.
///
/// The field names are the flag names of the command-line front end.
/// Defaults:
///
/// | field | default | role |
/// |---|---|---|
/// | `eps` | 1e-8 | termination tolerance on the error estimator |
/// | `theta` | 0.75 | phase-branching and inner-loop ratio |
/// | `phi` | 10 | minimal penalty growth factor on phase-one entry |
/// | `lambda_bar` | 1e6 | safeguard box for equality multipliers |
/// | `q0` | 1 | initial penalty |
/// | `alpha` | 0.25 | minimal slack quality in the constraint step |
/// | `beta` | 1 | lower bound (squared) on the constraint-step penalty |
/// | `sigma` | 0.5 | backtracking factor |
/// | `tau` | 0.1 | Armijo fraction for the feasibility decrease |
/// | `p_init` | 100 | penalty of the multiplier step |
/// | `delta` | 0.9 | required multiplier-step contraction |
/// | `gamma` | 1e-14 | regularization of the multiplier fit |
/// | `inner_tol` | 1e-10 | inner stationarity and Ω-membership tolerance |
/// | `s_min` | 1e-10 | smallest backtracking step before giving up |
/// | `floor_fraction` | 0.1 | inner loops stop once their target is below `(floor_fraction·eps)²` |
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub eps: f64,
    pub theta: f64,
    pub phi: f64,
    pub lambda_bar: f64,
    pub q0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub tau: f64,
    pub p_init: f64,
    pub delta: f64,
    pub gamma: f64,
    pub inner_tol: f64,
    pub s_min: f64,
    pub floor_fraction: f64,
    pub max_outer: usize,
    pub max_constraint_iters: usize,
    pub max_multiplier_iters: usize,
    pub max_backtracks: usize,
    pub max_inner_iters: usize,
    /// Solve the η-refinement by exhaustive piece enumeration when the
    /// number of finite stacked rows is at most 12.
    pub exact_eta_enumeration: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps: 1e-8,
            theta: 0.75,
            phi: 10.0,
            lambda_bar: 1e6,
            q0: 1.0,
            alpha: 0.25,
            beta: 1.0,
            sigma: 0.5,
            tau: 0.1,
            p_init: 100.0,
            delta: 0.9,
            gamma: 1e-14,
            inner_tol: 1e-10,
            s_min: 1e-10,
            floor_fraction: 0.1,
            max_outer: 200,
            max_constraint_iters: 50,
            max_multiplier_iters: 50,
            max_backtracks: 60,
            max_inner_iters: 500,
            exact_eta_enumeration: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        fn open01(name: &str, v: f64) -> Result<()> {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} = {v} must lie in (0, 1)")))
            }
        }
        fn positive(name: &str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} = {v} must be positive")))
            }
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidConfig(format!("eps = {} must be >= 0", self.eps)));
        }
        open01("theta", self.theta)?;
        if !(self.phi > 1.0 && self.phi.is_finite()) {
            return Err(Error::InvalidConfig(format!("phi = {} must exceed 1", self.phi)));
        }
        positive("lambda_bar", self.lambda_bar)?;
        if !(self.q0 >= 1.0 && self.q0.is_finite()) {
            return Err(Error::InvalidConfig(format!("q0 = {} must be >= 1", self.q0)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!("alpha = {} must lie in (0, 1]", self.alpha)));
        }
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta = {} must be >= 1", self.beta)));
        }
        open01("sigma", self.sigma)?;
        open01("tau", self.tau)?;
        if !(self.p_init >= 1.0 && self.p_init.is_finite()) {
            return Err(Error::InvalidConfig(format!("p_init = {} must be >= 1", self.p_init)));
        }
        open01("delta", self.delta)?;
        positive("gamma", self.gamma)?;
        positive("inner_tol", self.inner_tol)?;
        open01("s_min", self.s_min)?;
        if !(self.floor_fraction >= 0.0 && self.floor_fraction.is_finite()) {
            return Err(Error::InvalidConfig("floor_fraction must be >= 0".into()));
        }
        for (name, v) in [
            ("max_outer", self.max_outer),
            ("max_constraint_iters", self.max_constraint_iters),
            ("max_multiplier_iters", self.max_multiplier_iters),
            ("max_backtracks", self.max_backtracks),
            ("max_inner_iters", self.max_inner_iters),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Lower limit for the targets of the phase-two inner loops. Without it an
    /// exactly feasible constraint-step output would demand a multiplier
    /// estimator of exactly zero.
    pub fn guard_floor(&self) -> f64 {
        let f = self.floor_fraction * self.eps;
        (f * f).max(1e-30)
    }
}
