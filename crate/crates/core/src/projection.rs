//! Euclidean projection onto a polyhedron with reconstruction of the
//! stacked inequality multipliers from the row duals.
//!
//! For `Ω = { y : row_lo ≤ Ay ≤ row_hi, box_lo ≤ y ≤ box_hi }` the projection
//! of `c` is characterized by a row dual π with
//!
//! ```text
//!   y_i = clamp(c_i + a_iᵀπ, box_lo_i, box_hi_i)
//!   π_j > 0 ⇒ a_jᵀy = row_lo_j,   π_j < 0 ⇒ a_jᵀy = row_hi_j
//! ```
//!
//! where `a_i` is column `i` of `A`. The stacked multipliers are then
//! `[max(π,0); max(−π,0); υ₁; υ₂]` with `υ₁ = box_lo − c − Aᵀπ` on the
//! components clamped to the lower bound, `υ₂ = c + Aᵀπ − box_hi` on those
//! clamped to the upper bound, and zero elsewhere.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::model::{NlpProblem, Polyhedron};
use crate::qp::solve_qp;

/// Relative slack allowed before a reconstructed bound multiplier that comes
/// out negative is treated as an inconsistent dual.
const NEGATIVE_DUAL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionResult {
    pub y_star: DVector<f64>,
    pub pi_star: DVector<f64>,
    pub gamma1: DVector<f64>,
    pub gamma2: DVector<f64>,
    pub upsilon1: DVector<f64>,
    pub upsilon2: DVector<f64>,
    /// `[γ₁; γ₂; υ₁; υ₂]`.
    pub mu_stacked: DVector<f64>,
    /// Largest violation among stationarity, feasibility, multiplier sign and
    /// complementary slackness.
    pub kkt_residual: f64,
}

/// Reconstructed multipliers `(γ₁, γ₂, υ₁, υ₂, μ)`.
pub type Multipliers = (
    DVector<f64>,
    DVector<f64>,
    DVector<f64>,
    DVector<f64>,
    DVector<f64>,
);

/// Projects `c` onto `poly`.
pub fn project(poly: &Polyhedron, c: &DVector<f64>) -> Result<ProjectionResult> {
    let n = poly.dim();
    let m = poly.num_rows();
    check_len("projection point", n, c.len())?;
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("projection point".into()));
    }
    let sol = solve_qp(&DMatrix::identity(n, n), &(-c), poly)?;
    let mut y = sol.x;
    for &s in &sol.active {
        if s >= 2 * m && s < 2 * m + n {
            y[s - 2 * m] = poly.box_lo()[s - 2 * m];
        } else if s >= 2 * m + n {
            y[s - 2 * m - n] = poly.box_hi()[s - 2 * m - n];
        }
    }
    poly.clamp_to_box(&mut y);
    let pi = DVector::from_fn(m, |j, _| sol.mu[j] - sol.mu[m + j]);
    let (gamma1, gamma2, upsilon1, upsilon2, mu_stacked) = recover_multipliers(poly, c, &pi, &y)?;
    let kkt_residual = projection_kkt_residual(poly, c, &y, &mu_stacked)?;
    Ok(ProjectionResult {
        y_star: y,
        pi_star: pi,
        gamma1,
        gamma2,
        upsilon1,
        upsilon2,
        mu_stacked,
        kkt_residual,
    })
}

/// Builds the stacked multipliers from a row dual and the projected point.
pub fn recover_multipliers(
    poly: &Polyhedron,
    c: &DVector<f64>,
    pi_star: &DVector<f64>,
    y_star: &DVector<f64>,
) -> Result<Multipliers> {
    let n = poly.dim();
    let m = poly.num_rows();
    check_len("projection point", n, c.len())?;
    check_len("row dual", m, pi_star.len())?;
    check_len("projected point", n, y_star.len())?;
    let gamma1 = pi_star.map(|v| v.max(0.0));
    let gamma2 = pi_star.map(|v| (-v).max(0.0));
    let t = c + poly.a().tr_mul(pi_star);
    let mut upsilon1 = DVector::zeros(n);
    let mut upsilon2 = DVector::zeros(n);
    let nonneg = |v: f64, i: usize, which: &str| -> Result<f64> {
        if v >= 0.0 {
            Ok(v)
        } else if v >= -NEGATIVE_DUAL_TOL * (1.0 + t[i].abs()) {
            Ok(0.0)
        } else {
            Err(Error::Internal(format!(
                "reconstructed {which}[{i}] = {v:e} is negative"
            )))
        }
    };
    for i in 0..n {
        let (lo, hi) = (poly.box_lo()[i], poly.box_hi()[i]);
        if lo == hi {
            upsilon1[i] = (lo - t[i]).max(0.0);
            upsilon2[i] = (t[i] - hi).max(0.0);
            continue;
        }
        // A component whose unclamped value sits exactly on the bound is
        // free, so its bound multiplier is zero.
        if y_star[i] == lo && t[i] != lo {
            upsilon1[i] = nonneg(lo - t[i], i, "upsilon1")?;
        } else if y_star[i] == hi && t[i] != hi {
            upsilon2[i] = nonneg(t[i] - hi, i, "upsilon2")?;
        }
    }
    let mut mu = DVector::zeros(poly.num_stacked());
    mu.rows_mut(0, m).copy_from(&gamma1);
    mu.rows_mut(m, m).copy_from(&gamma2);
    mu.rows_mut(2 * m, n).copy_from(&upsilon1);
    mu.rows_mut(2 * m + n, n).copy_from(&upsilon2);
    Ok((gamma1, gamma2, upsilon1, upsilon2, mu))
}

/// KKT residual of a candidate projection `(y, μ)` of `c`.
pub fn projection_kkt_residual(
    poly: &Polyhedron,
    c: &DVector<f64>,
    y: &DVector<f64>,
    mu: &DVector<f64>,
) -> Result<f64> {
    let stat = (y - c + poly.stacked_transpose_mul(mu)?).amax();
    let r = poly.stacked_residual(y)?;
    let mut worst = stat;
    for (ri, mi) in r.iter().zip(mu.iter()) {
        worst = worst.max(ri.max(0.0)).max((-mi).max(0.0));
        if ri.is_finite() {
            worst = worst.max((mi * ri).abs());
        } else if *mi != 0.0 {
            worst = worst.max(mi.abs());
        }
    }
    Ok(worst)
}

/// Projection of `x − ∇ₓL_q(x, ν)` with `L_q = f + νᵀh + q‖h‖²`.
pub fn project_gradient_step(
    p: &NlpProblem,
    x: &DVector<f64>,
    nu: &DVector<f64>,
    q: f64,
) -> Result<ProjectionResult> {
    check_len("point", p.dim(), x.len())?;
    check_len("multiplier", p.num_eq(), nu.len())?;
    if !(q >= 0.0) {
        return Err(Error::Precondition(format!("penalty q = {q} is negative")));
    }
    let h = p.constraints(x);
    let weights = nu + &h * (2.0 * q);
    let grad = p.gradient(x) + p.jacobian(x).tr_mul(&weights);
    project(p.omega(), &(x - grad))
}

/// Stacked inequality multipliers `μ(x, 1)` read off the unit-step projection.
pub fn mu_of_x(p: &NlpProblem, x: &DVector<f64>, nu: &DVector<f64>, q: f64) -> Result<DVector<f64>> {
    Ok(project_gradient_step(p, x, nu, q)?.mu_stacked)
}
