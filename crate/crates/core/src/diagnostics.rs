//! Offline regularity checks at a candidate solution.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Result};
use crate::model::NlpProblem;

/// Outcome of the linear-independence check on active constraint gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct LicqReport {
    /// Stacked indices with `|r_i(x)| ≤ tol`.
    pub active: Vec<usize>,
    pub rows: usize,
    pub rank: usize,
    pub full_rank: bool,
    pub smallest_singular_value: f64,
}

/// Stacked rows active at `x` within `tol`.
pub fn active_set(p: &NlpProblem, x: &DVector<f64>, tol: f64) -> Result<Vec<usize>> {
    let r = p.omega().stacked_residual(x)?;
    Ok((0..r.len()).filter(|&i| r[i].abs() <= tol).collect())
}

/// Rank of `[∇h(x); ∇r_A(x)]` over the active stacked rows.
pub fn licq_rank(p: &NlpProblem, x: &DVector<f64>, tol: f64) -> Result<LicqReport> {
    check_len("licq point", p.dim(), x.len())?;
    let active = active_set(p, x, tol)?;
    let jr = p.omega().stacked_jacobian();
    let jh = p.jacobian(x);
    let rows = jh.nrows() + active.len();
    let n = p.dim();
    let mut g = DMatrix::zeros(rows, n);
    g.rows_mut(0, jh.nrows()).copy_from(&jh);
    for (k, &i) in active.iter().enumerate() {
        g.row_mut(jh.nrows() + k).copy_from(&jr.row(i));
    }
    if rows == 0 {
        return Ok(LicqReport {
            active,
            rows,
            rank: 0,
            full_rank: true,
            smallest_singular_value: f64::INFINITY,
        });
    }
    let sv = g.singular_values();
    let smax = sv.max();
    let rank = sv.iter().filter(|&&s| s > 1e-10 * smax.max(1.0)).count();
    let smallest = if rows > n { 0.0 } else { sv.min() };
    Ok(LicqReport {
        active,
        rows,
        rank,
        full_rank: rank == rows,
        smallest_singular_value: smallest,
    })
}

/// Outcome of the strict complementarity check.
#[derive(Clone, Debug, PartialEq)]
pub struct ScsReport {
    pub holds: bool,
    /// Stacked indices where both `r_i` and `μ_i` vanish, or neither does.
    pub violations: Vec<usize>,
}

/// Checks that exactly one of `r_i(x)` and `μ_i` is zero for every finite
/// stacked row.
pub fn strict_complementarity(
    p: &NlpProblem,
    x: &DVector<f64>,
    mu: &DVector<f64>,
    tol: f64,
) -> Result<ScsReport> {
    check_len("multiplier", p.num_ineq(), mu.len())?;
    let r = p.omega().stacked_residual(x)?;
    let violations: Vec<usize> = (0..r.len())
        .filter(|&i| r[i].is_finite())
        .filter(|&i| (r[i].abs() <= tol) == (mu[i].abs() <= tol))
        .collect();
    Ok(ScsReport {
        holds: violations.is_empty(),
        violations,
    })
}

/// Residuals of the four KKT conditions at `(x, λ, μ)`:
/// stationarity, primal feasibility (h and Ω), multiplier sign, and
/// complementary slackness. All are maxima of absolute values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub feasibility: f64,
    pub sign: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.feasibility)
            .max(self.sign)
            .max(self.complementarity)
    }
}

pub fn kkt_residuals(
    p: &NlpProblem,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
) -> Result<KktResiduals> {
    let g = crate::estimators::lagrangian_gradient(p, x, lambda, mu)?;
    let h = p.constraints(x);
    let r = p.omega().stacked_residual(x)?;
    let mut feas = h.amax();
    let mut sign: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for (ri, mi) in r.iter().zip(mu.iter()) {
        feas = feas.max(ri.max(0.0));
        sign = sign.max((-mi).max(0.0));
        if ri.is_finite() {
            comp = comp.max((ri * mi).abs());
        } else {
            comp = comp.max(mi.abs());
        }
    }
    Ok(KktResiduals {
        stationarity: g.amax(),
        feasibility: feas,
        sign,
        complementarity: comp,
    })
}
