//! Dense strictly convex quadratic programming over a polyhedron.
//!
//! Solves `min ½ xᵀHx + gᵀx  s.t.  x ∈ Ω` with the dual active-set method of
//! Goldfarb and Idnani: start from the unconstrained minimizer and add the
//! most violated constraint one at a time, dropping active constraints whose
//! multiplier would turn negative. Every working-set step solves the KKT
//! system `[H N; Nᵀ 0]` with a pivoted LU factorization.
//!
//! Rows with `lo == hi` are handled as genuine equalities with free-sign
//! multipliers, which avoids the degenerate twin-inequality pair.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::Polyhedron;

/// One constraint `nᵀx ≥ b` (or `nᵀx = b`) in the engine's internal form.
#[derive(Clone, Debug)]
struct Constraint {
    normal: DVector<f64>,
    rhs: f64,
    kind: Kind,
}

#[derive(Clone, Copy, Debug)]
enum Kind {
    /// Inequality tied to one stacked row.
    Ineq(usize),
    /// Equality tied to its lower and upper stacked rows.
    Eq(usize, usize),
}

/// Result of [`solve_qp`].
#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers in stacked order, so that `Hx + g + J_rᵀμ = 0`.
    pub mu: DVector<f64>,
    /// Stacked indices of the constraints in the final working set.
    pub active: Vec<usize>,
    pub iterations: usize,
}

fn build_constraints(poly: &Polyhedron) -> Vec<Constraint> {
    let n = poly.dim();
    let m = poly.num_rows();
    let a = poly.a();
    let mut out = Vec::new();
    let unit = |i: usize, s: f64| {
        let mut e = DVector::zeros(n);
        e[i] = s;
        e
    };
    for j in 0..m {
        let (lo, hi) = (poly.row_lo()[j], poly.row_hi()[j]);
        let row: DVector<f64> = a.row(j).transpose();
        if lo == hi {
            out.push(Constraint {
                normal: row,
                rhs: lo,
                kind: Kind::Eq(j, m + j),
            });
            continue;
        }
        if lo.is_finite() {
            out.push(Constraint {
                normal: row.clone(),
                rhs: lo,
                kind: Kind::Ineq(j),
            });
        }
        if hi.is_finite() {
            out.push(Constraint {
                normal: -row,
                rhs: -hi,
                kind: Kind::Ineq(m + j),
            });
        }
    }
    for i in 0..n {
        let (lo, hi) = (poly.box_lo()[i], poly.box_hi()[i]);
        if lo == hi {
            out.push(Constraint {
                normal: unit(i, 1.0),
                rhs: lo,
                kind: Kind::Eq(2 * m + i, 2 * m + n + i),
            });
            continue;
        }
        if lo.is_finite() {
            out.push(Constraint {
                normal: unit(i, 1.0),
                rhs: lo,
                kind: Kind::Ineq(2 * m + i),
            });
        }
        if hi.is_finite() {
            out.push(Constraint {
                normal: unit(i, -1.0),
                rhs: -hi,
                kind: Kind::Ineq(2 * m + n + i),
            });
        }
    }
    out
}

/// Solves `[H N; Nᵀ 0] [z; r] = [v; 0]` for the working set `N`.
fn kkt_solve(
    h: &DMatrix<f64>,
    cons: &[Constraint],
    active: &[usize],
    v: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = h.nrows();
    let k = active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    for (col, &c) in active.iter().enumerate() {
        let nv = &cons[c].normal;
        kkt.view_mut((0, n + col), (n, 1)).copy_from(nv);
        kkt.view_mut((n + col, 0), (1, n)).copy_from(&nv.transpose());
    }
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(v);
    let sol = kkt.full_piv_lu().solve(&rhs)?;
    if sol.iter().any(|x| !x.is_finite()) {
        return None;
    }
    Some((sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned()))
}

/// Minimizes `½ xᵀHx + gᵀx` over `poly`. `H` must be symmetric positive
/// definite.
pub fn solve_qp(h: &DMatrix<f64>, g: &DVector<f64>, poly: &Polyhedron) -> Result<QpSolution> {
    let n = poly.dim();
    crate::error::check_len("qp hessian", n, h.nrows())?;
    crate::error::check_len("qp hessian", n, h.ncols())?;
    crate::error::check_len("qp gradient", n, g.len())?;
    if g.iter().chain(h.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("quadratic program data".into()));
    }
    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Internal("QP Hessian is not positive definite".into()))?;
    let cons = build_constraints(poly);
    let scale = 1.0 + h.amax() + g.amax();
    let mut x = -chol.solve(g);
    let mut active: Vec<usize> = Vec::new();
    // Multiplier of each working-set member; the sign of equality
    // multipliers refers to the oriented normal stored in `flip`.
    let mut u: Vec<f64> = Vec::new();
    let mut flip = vec![1.0_f64; cons.len()];
    let max_iter = 20 * (n + cons.len()) + 50;
    let mut iterations = 0;

    let violation = |x: &DVector<f64>, c: &Constraint| c.normal.dot(x) - c.rhs;
    let feas_tol = |x: &DVector<f64>, c: &Constraint| {
        1e-12 * (1.0 + c.rhs.abs() + c.normal.norm() * x.norm())
    };

    // Equalities are added first and never dropped.
    let eq_ids: Vec<usize> = (0..cons.len())
        .filter(|&i| matches!(cons[i].kind, Kind::Eq(..)))
        .collect();
    let mut pending_eq = eq_ids.into_iter();
    loop {
        iterations += 1;
        if iterations > max_iter {
            let res = cons
                .iter()
                .map(|c| (-violation(&x, c)).max(0.0))
                .fold(0.0, f64::max);
            return Err(Error::SubsolverFailure { residual: res });
        }
        // Choose the next constraint to add.
        let mut next: Option<usize> = None;
        for id in pending_eq.by_ref() {
            let s = violation(&x, &cons[id]);
            if s.abs() > feas_tol(&x, &cons[id]) || kkt_check_independent(h, &cons, &active, id) {
                next = Some(id);
                break;
            }
        }
        if next.is_none() {
            let mut worst = 0.0;
            for (id, c) in cons.iter().enumerate() {
                if matches!(c.kind, Kind::Eq(..)) || active.contains(&id) {
                    continue;
                }
                let s = violation(&x, c);
                if s < -feas_tol(&x, c) {
                    let rel = s / c.normal.norm();
                    if rel < worst {
                        worst = rel;
                        next = Some(id);
                    }
                }
            }
        }
        let Some(p) = next else { break };
        let is_eq = matches!(cons[p].kind, Kind::Eq(..));
        if is_eq && violation(&x, &cons[p]) > 0.0 {
            flip[p] = -1.0;
        }
        let np = &cons[p].normal * flip[p];
        let sp_of = |x: &DVector<f64>| flip[p] * violation(x, &cons[p]);
        let mut up = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::SubsolverFailure {
                    residual: -sp_of(&x),
                });
            }
            let (z, r) = kkt_solve(h, &cons, &active, &np)
                .ok_or_else(|| Error::Internal("singular working-set system".into()))?;
            let oriented: Vec<f64> = active.iter().map(|&c| flip[c]).collect();
            // Partial step: largest move keeping inequality multipliers ≥ 0.
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (k, &c) in active.iter().enumerate() {
                if matches!(cons[c].kind, Kind::Eq(..)) {
                    continue;
                }
                let rk = r[k] * oriented[k];
                if rk > 0.0 {
                    let t = u[k] / rk;
                    if t < t1 {
                        t1 = t;
                        drop_at = Some(k);
                    }
                }
            }
            let znp = z.dot(&np);
            let zero_step = z.norm() <= 1e-14 * (1.0 + np.norm()) || znp <= 0.0;
            let t2 = if zero_step { f64::INFINITY } else { -sp_of(&x) / znp };
            let t = t1.min(t2);
            if !t.is_finite() {
                if is_eq && sp_of(&x).abs() <= feas_tol(&x, &cons[p]) {
                    // Dependent but consistent equality: nothing to add.
                    break;
                }
                return Err(Error::Infeasible);
            }
            if !zero_step {
                x += &z * t;
            }
            for k in 0..active.len() {
                u[k] -= t * r[k] * oriented[k];
            }
            up += t;
            if t2 <= t1 {
                active.push(p);
                u.push(up);
                break;
            }
            let k = drop_at.expect("finite partial step has a blocking constraint");
            active.remove(k);
            u.remove(k);
        }
    }

    // Final multipliers from the KKT system for accuracy.
    let m = poly.num_stacked();
    let mut mu = DVector::zeros(m);
    let n_act = active.len();
    let mut stacked_active = Vec::with_capacity(n_act);
    if n_act > 0 {
        let mut nmat = DMatrix::zeros(n, n_act);
        for (k, &c) in active.iter().enumerate() {
            nmat.column_mut(k).copy_from(&cons[c].normal);
        }
        let resid = h * &x + g;
        let refined = nmat.clone().svd(true, true).solve(&resid, 1e-14 * scale).ok();
        for (k, &c) in active.iter().enumerate() {
            let mut val = u[k] * flip[c];
            if let Some(rf) = &refined {
                if rf[k].is_finite() {
                    val = rf[k];
                }
            }
            match cons[c].kind {
                Kind::Ineq(s) => {
                    mu[s] = val.max(0.0);
                    stacked_active.push(s);
                }
                Kind::Eq(lo, hi) => {
                    if val >= 0.0 {
                        mu[lo] = val;
                    } else {
                        mu[hi] = -val;
                    }
                    stacked_active.push(lo);
                    stacked_active.push(hi);
                }
            }
        }
    }
    Ok(QpSolution {
        x,
        mu,
        active: stacked_active,
        iterations,
    })
}

/// `true` if an equality is not yet implied by the working set; redundant
/// equalities that already hold are skipped.
fn kkt_check_independent(
    h: &DMatrix<f64>,
    cons: &[Constraint],
    active: &[usize],
    id: usize,
) -> bool {
    match kkt_solve(h, cons, active, &cons[id].normal) {
        Some((z, _)) => z.norm() > 1e-12 * (1.0 + cons[id].normal.norm()),
        None => true,
    }
}
