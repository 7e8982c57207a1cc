//! Brute-force references and derivative checks.
//!
//! These routines favour transparency over speed: the QP oracle enumerates
//! active sets, the η oracle enumerates every smooth piece, and derivatives
//! are checked with central differences. They ship with the library so the
//! command-line `check` can run them on user problems.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{kkt_residuals, KktResiduals};
use crate::error::{check_len, Error, Result};
use crate::estimators::PointEval;
use crate::model::{NlpProblem, Polyhedron, ReferenceSolution};
use crate::projection::project;

/// `min ½ xᵀHx + gᵀx` over a polyhedron, H symmetric positive semidefinite.
#[derive(Clone, Debug)]
pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub poly: Polyhedron,
}

impl DenseQp {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, poly: Polyhedron) -> Result<Self> {
        let n = poly.dim();
        if h.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                context: "oracle hessian",
                expected: n * n,
                got: h.len(),
            });
        }
        check_len("oracle gradient", n, g.len())?;
        let scale = h.amax().max(1.0);
        if (&h - h.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidProblem("oracle Hessian is not symmetric".into()));
        }
        Ok(Self { h, g, poly })
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }
}

/// Oracle QP solution with stacked multipliers (`Hx + g + J_rᵀμ = 0`).
#[derive(Clone, Debug)]
pub struct OracleQpSolution {
    pub x: DVector<f64>,
    pub mu: DVector<f64>,
    pub active: Vec<usize>,
}

const MAX_QP_DIM: usize = 10;
const MAX_QP_ROWS: usize = 24;

/// Calls `visit` on every k-subset of `0..n` in lexicographic order until it
/// returns true.
fn for_each_subset(n: usize, k: usize, visit: &mut dyn FnMut(&[usize]) -> bool) -> bool {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize]) -> bool) -> bool {
        if cur.len() == k {
            return visit(cur);
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            if rec(i + 1, n, k, cur, visit) {
                return true;
            }
            cur.pop();
        }
        false
    }
    rec(0, n, k, &mut Vec::with_capacity(k), visit)
}

/// Solves a small QP by enumerating active sets of the stacked inequalities
/// in order of increasing size. Equality rows (`lo == hi`) are always
/// active. The first KKT point found is returned; for a convex QP it is a
/// global minimizer.
pub fn brute_force_qp(qp: &DenseQp) -> Result<OracleQpSolution> {
    let poly = &qp.poly;
    let n = poly.dim();
    let m = poly.num_rows();
    if n > MAX_QP_DIM {
        return Err(Error::BoundExceeded(format!("dimension {n} exceeds {MAX_QP_DIM}")));
    }
    let jr = poly.stacked_jacobian();
    // r_i(x) = jr_i·x − bound_i for upper-type rows, and −(bound_i) + ... :
    // in general r_i(x) = jr_i·x + offset_i.
    let offsets: Vec<f64> = (0..poly.num_stacked())
        .map(|i| {
            let b = poly.stacked_bound(i);
            match poly.stacked_row(i) {
                crate::model::StackedRow::RowLower(_) | crate::model::StackedRow::BoxLower(_) => b,
                _ => -b,
            }
        })
        .collect();
    let twin = |i: usize| -> Option<usize> {
        match poly.stacked_row(i) {
            crate::model::StackedRow::RowLower(j) if poly.row_lo()[j] == poly.row_hi()[j] => Some(m + j),
            crate::model::StackedRow::BoxLower(k) if poly.box_lo()[k] == poly.box_hi()[k] => {
                Some(2 * m + n + k)
            }
            _ => None,
        }
    };
    let mut equalities = Vec::new();
    let mut twins = Vec::new();
    let mut inequalities = Vec::new();
    for i in poly.finite_indices() {
        if let Some(t) = twin(i) {
            equalities.push(i);
            twins.push(t);
        } else if !twins.contains(&i) {
            inequalities.push(i);
        }
    }
    if equalities.len() + inequalities.len() > MAX_QP_ROWS {
        return Err(Error::BoundExceeded(format!(
            "{} constraints exceed {MAX_QP_ROWS}",
            equalities.len() + inequalities.len()
        )));
    }
    let scale = 1.0 + qp.h.amax() + qp.g.amax();
    let mut found: Option<OracleQpSolution> = None;
    let max_k = inequalities.len().min(n);
    for k in 0..=max_k {
        let done = for_each_subset(inequalities.len(), k, &mut |sub: &[usize]| {
            let rows: Vec<usize> = equalities
                .iter()
                .copied()
                .chain(sub.iter().map(|&s| inequalities[s]))
                .collect();
            let na = rows.len();
            let mut kkt = DMatrix::zeros(n + na, n + na);
            kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
            let mut rhs = DVector::zeros(n + na);
            rhs.rows_mut(0, n).copy_from(&(-&qp.g));
            for (c, &i) in rows.iter().enumerate() {
                for col in 0..n {
                    kkt[(col, n + c)] = jr[(i, col)];
                    kkt[(n + c, col)] = jr[(i, col)];
                }
                rhs[n + c] = -offsets[i];
            }
            let Ok(sol) = kkt.clone().svd(true, true).solve(&rhs, 1e-12 * scale) else {
                return false;
            };
            if (&kkt * &sol - &rhs).amax() > 1e-9 * scale {
                return false;
            }
            let x = sol.rows(0, n).into_owned();
            let mut mu = DVector::zeros(poly.num_stacked());
            for (c, &i) in rows.iter().enumerate() {
                let v = sol[n + c];
                if c < equalities.len() {
                    if v >= 0.0 {
                        mu[i] = v;
                    } else {
                        mu[twins[c]] = -v;
                    }
                } else {
                    if v < -1e-10 * scale {
                        return false;
                    }
                    mu[i] = v.max(0.0);
                }
            }
            if !poly.is_feasible(&x, 1e-9 * (1.0 + x.amax())) {
                return false;
            }
            found = Some(OracleQpSolution {
                x,
                mu,
                active: rows,
            });
            true
        });
        if done {
            break;
        }
    }
    found.ok_or(Error::Infeasible)
}

/// Global minimizer of `E_m1(z, ν, η)` over η ≥ 0 by enumerating, for every
/// finite stacked row, whether η_j is zero, on the kink `η_j = −r_j(z)`,
/// inside the quadratic branch, or inside the flat branch.
pub fn enumerate_em1_eta(p: &NlpProblem, z: &DVector<f64>, nu: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let pe = PointEval::new(p, z)?;
    check_len("nu", p.num_eq(), nu.len())?;
    let omega = p.omega();
    let finite = omega.finite_indices();
    let k = finite.len();
    if k > 12 {
        return Err(Error::BoundExceeded(format!("{k} finite rows exceed 12")));
    }
    let jr = omega.stacked_jacobian();
    let n = p.dim();
    let mm = DMatrix::from_fn(n, k, |r, c| jr[(finite[c], r)]);
    let s: Vec<f64> = finite.iter().map(|&i| -pe.r[i]).collect();
    let g0 = &pe.grad_f + pe.jac_h.tr_mul(nu);
    let value = |eta: &DVector<f64>| {
        let g = &g0 + &mm * eta;
        g.norm_squared() + eta.iter().zip(&s).map(|(e, sj)| e.min(*sj).powi(2)).sum::<f64>()
    };
    let mut best = (f64::INFINITY, DVector::zeros(k));
    let total = 4usize.pow(k as u32);
    let mut state = vec![0u8; k];
    for code in 0..total {
        let mut c = code;
        for st in state.iter_mut() {
            *st = (c % 4) as u8;
            c /= 4;
        }
        // 0: zero, 1: kink, 2: quadratic interior, 3: flat interior
        if (0..k).any(|j| s[j] <= 0.0 && (state[j] == 1 || state[j] == 2)) {
            continue;
        }
        let mut eta = DVector::zeros(k);
        let free: Vec<usize> = (0..k).filter(|&j| state[j] >= 2).collect();
        for j in 0..k {
            if state[j] == 1 {
                eta[j] = s[j];
            }
        }
        if !free.is_empty() {
            let mf = DMatrix::from_fn(n, free.len(), |r, c| mm[(r, free[c])]);
            let mut lhs = mf.transpose() * &mf;
            for (c, &j) in free.iter().enumerate() {
                if state[j] == 2 {
                    lhs[(c, c)] += 1.0;
                }
            }
            let rhs = -mf.tr_mul(&(&g0 + &mm * &eta));
            let Ok(sol) = lhs.svd(true, true).solve(&rhs, 1e-13) else {
                continue;
            };
            let mut ok = true;
            for (c, &j) in free.iter().enumerate() {
                let v = sol[c];
                let tol = 1e-12 * (1.0 + s[j].abs());
                ok &= if state[j] == 2 {
                    v >= -tol && v <= s[j] + tol
                } else {
                    v >= s[j].max(0.0) - tol
                };
                eta[j] = v.max(0.0);
            }
            if !ok {
                continue;
            }
        }
        let val = value(&eta);
        if val < best.0 {
            best = (val, eta);
        }
    }
    let mut out = DVector::zeros(omega.num_stacked());
    for (c, &i) in finite.iter().enumerate() {
        out[i] = best.1[c];
    }
    Ok((out, best.0))
}

fn check_step(step: f64) -> Result<()> {
    if (1e-8..=1e-4).contains(&step) {
        Ok(())
    } else {
        Err(Error::Precondition(format!("difference step {step} outside [1e-8, 1e-4]")))
    }
}

/// Central-difference gradient.
pub fn finite_diff_gradient(
    f: impl Fn(&DVector<f64>) -> f64,
    x: &DVector<f64>,
    step: f64,
) -> Result<DVector<f64>> {
    check_step(step)?;
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += step;
        xm[i] -= step;
        g[i] = (f(&xp) - f(&xm)) / (2.0 * step);
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("finite-difference gradient".into()));
    }
    Ok(g)
}

/// Central-difference Jacobian of a vector function.
pub fn finite_diff_jacobian(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
    step: f64,
) -> Result<DMatrix<f64>> {
    check_step(step)?;
    let rows = f(x).len();
    let mut j = DMatrix::zeros(rows, x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += step;
        xm[i] -= step;
        let col = (f(&xp) - f(&xm)) / (2.0 * step);
        j.column_mut(i).copy_from(&col);
    }
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("finite-difference jacobian".into()));
    }
    Ok(j)
}

/// Random points around Ω: uniform in finite boxes, within distance 2 of a
/// single finite bound, and in `[−2, 2]` for free coordinates.
pub fn sample_points(poly: &Polyhedron, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            DVector::from_fn(poly.dim(), |i, _| {
                let (lo, hi) = (poly.box_lo()[i], poly.box_hi()[i]);
                match (lo.is_finite(), hi.is_finite()) {
                    (true, true) if hi > lo => rng.random_range(lo..hi),
                    (true, true) => lo,
                    (true, false) => lo + rng.random_range(0.0..2.0),
                    (false, true) => hi - rng.random_range(0.0..2.0),
                    (false, false) => rng.random_range(-2.0..2.0),
                }
            })
        })
        .collect()
}

/// Largest relative disagreement between exact and finite-difference
/// derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeReport {
    pub points: usize,
    pub gradient_error: f64,
    /// One entry per equality constraint.
    pub constraint_errors: Vec<f64>,
}

impl DerivativeReport {
    pub fn worst_constraint(&self) -> Option<(usize, f64)> {
        self.constraint_errors
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

fn rel_err(exact: &DVector<f64>, approx: &DVector<f64>) -> f64 {
    (exact - approx).amax() / exact.amax().max(1.0)
}

/// Compares exact gradients and Jacobian rows with central differences at
/// the given points.
pub fn derivative_check(p: &NlpProblem, points: &[DVector<f64>], step: f64) -> Result<DerivativeReport> {
    check_step(step)?;
    let ell = p.num_eq();
    let mut gradient_error: f64 = 0.0;
    let mut constraint_errors = vec![0.0_f64; ell];
    for x in points {
        check_len("check point", p.dim(), x.len())?;
        let fd = finite_diff_gradient(|y| p.objective(y), x, step)?;
        gradient_error = gradient_error.max(rel_err(&p.gradient(x), &fd));
        let fj = finite_diff_jacobian(|y| p.constraints(y), x, step)?;
        let jx = p.jacobian(x);
        for (j, err) in constraint_errors.iter_mut().enumerate() {
            let exact = jx.row(j).transpose();
            let approx = fj.row(j).transpose();
            *err = err.max(rel_err(&exact, &approx));
        }
    }
    Ok(DerivativeReport {
        points: points.len(),
        gradient_error,
        constraint_errors,
    })
}

/// Worst projection KKT residual and infeasibility over random targets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionSweep {
    pub samples: usize,
    pub max_kkt_residual: f64,
    pub max_infeasibility: f64,
}

pub fn projection_sweep(poly: &Polyhedron, samples: usize, seed: u64) -> Result<ProjectionSweep> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = sample_points(poly, samples, seed ^ 0x5eed);
    let mut out = ProjectionSweep {
        samples,
        max_kkt_residual: 0.0,
        max_infeasibility: 0.0,
    };
    for x in base {
        let c = x.map(|v| v + rng.random_range(-1.5..1.5));
        let r = project(poly, &c)?;
        out.max_kkt_residual = out.max_kkt_residual.max(r.kkt_residual);
        out.max_infeasibility = out.max_infeasibility.max(poly.max_violation(&r.y_star)?);
    }
    Ok(out)
}

/// Residuals of a reference KKT triple shipped with a problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceReport {
    /// `|h_j(x*)|` per constraint.
    pub constraint_residuals: Vec<f64>,
    pub kkt: KktResiduals,
}

pub fn reference_check(p: &NlpProblem, sol: &ReferenceSolution) -> Result<ReferenceReport> {
    let h = p.constraints(&sol.x);
    let mu = match &sol.mu {
        Some(m) => m.clone(),
        None => crate::projection::mu_of_x(p, &sol.x, &sol.lambda, 0.0)?,
    };
    Ok(ReferenceReport {
        constraint_residuals: h.iter().map(|v| v.abs()).collect(),
        kkt: kkt_residuals(p, &sol.x, &sol.lambda, &mu)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use nalgebra::dvector;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn projection_qp_onto_line() {
        let poly = Polyhedron::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            dvector![1.0],
            dvector![1.0],
            dvector![-INF, -INF],
            dvector![INF, INF],
        )
        .unwrap();
        let qp = DenseQp::new(DMatrix::identity(2, 2), -dvector![2.0, 2.0], poly).unwrap();
        let s = brute_force_qp(&qp).unwrap();
        assert!((s.x - dvector![0.5, 0.5]).norm() < 1e-12);
        assert!((s.mu[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn lin_eq_box_qp() {
        let poly = Polyhedron::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            dvector![2.0],
            dvector![2.0],
            dvector![0.0, 0.0],
            dvector![INF, INF],
        )
        .unwrap();
        let qp = DenseQp::new(DMatrix::identity(2, 2), DVector::zeros(2), poly).unwrap();
        assert!((brute_force_qp(&qp).unwrap().x - dvector![1.0, 1.0]).norm() < 1e-12);
    }

    #[test]
    fn interior_minimum() {
        let poly = Polyhedron::from_box(dvector![-1.0, -1.0], dvector![1.0, 1.0]).unwrap();
        let qp = DenseQp::new(DMatrix::identity(2, 2), -dvector![0.25, -0.5], poly).unwrap();
        let s = brute_force_qp(&qp).unwrap();
        assert!((s.x - dvector![0.25, -0.5]).norm() < 1e-14);
        assert!(s.active.is_empty());
    }

    #[test]
    fn rejects_large_instances() {
        let poly = Polyhedron::unconstrained(11);
        let qp = DenseQp::new(DMatrix::identity(11, 11), DVector::zeros(11), poly).unwrap();
        assert!(matches!(brute_force_qp(&qp), Err(Error::BoundExceeded(_))));
    }

    #[test]
    fn eta_oracle_scalar_cases() {
        use crate::model::QuadraticNlpSpec;
        let mk = |grad: f64| {
            QuadraticNlpSpec::new(
                "s",
                DMatrix::zeros(1, 1),
                dvector![grad],
                vec![],
                Polyhedron::from_box(dvector![0.0], dvector![INF]).unwrap(),
            )
            .unwrap()
            .to_problem()
        };
        let (eta, v) = enumerate_em1_eta(&mk(1.0), &dvector![1.0], &DVector::zeros(0)).unwrap();
        assert!((eta[0] - 0.5).abs() < 1e-14 && (v - 0.5).abs() < 1e-14);
        let (eta, v) = enumerate_em1_eta(&mk(0.0), &dvector![1.0], &DVector::zeros(0)).unwrap();
        assert_eq!((eta[0], v), (0.0, 0.0));
    }

    #[test]
    fn finite_difference_examples() {
        let g = finite_diff_gradient(|x| 0.5 * x.norm_squared(), &dvector![1.0, 2.0], 1e-6).unwrap();
        assert!((g - dvector![1.0, 2.0]).amax() < 1e-7);
        let j = finite_diff_jacobian(
            |x| dvector![x[0] * x[0] + x[1] * x[1] - 2.0],
            &dvector![1.0, 1.0],
            1e-6,
        )
        .unwrap();
        assert!((j - DMatrix::from_row_slice(1, 2, &[2.0, 2.0])).amax() < 1e-6);
        assert!(finite_diff_gradient(|x| x[0], &dvector![1.0], 1e-2).is_err());
        assert!(matches!(
            finite_diff_gradient(|_| f64::NAN, &dvector![1.0], 1e-6),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn corpus_derivatives_agree() {
        for cp in corpus::corpus() {
            let pts = sample_points(cp.problem.omega(), 100, 7);
            let rep = derivative_check(&cp.problem, &pts, 1e-6).unwrap();
            assert!(rep.gradient_error < 1e-6, "{}: {rep:?}", cp.name);
            assert!(rep.constraint_errors.iter().all(|&e| e < 1e-6), "{}", cp.name);
        }
    }

    #[test]
    fn reference_check_flags_wrong_constraint() {
        let cp = corpus::lin_eq_box();
        let mut definition = cp.definition.clone().unwrap();
        definition.constraints[0].a = dvector![1.0, 1.5];
        let rep = reference_check(&definition.to_problem(), definition.solution.as_ref().unwrap()).unwrap();
        assert!((rep.constraint_residuals[0] - 0.5).abs() < 1e-15);
    }
}
