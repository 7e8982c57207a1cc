//! Inner minimization engines.
//!
//! * [`minimize_over_polyhedron`]: smooth minimization over Ω by projected
//!   Newton steps (each step is a convex QP over Ω) with Armijo
//!   backtracking.
//! * [`minimize_em0_regularized`]: the strictly convex multiplier fit
//!   `E_m0(z, ν, η) + γ‖[ν, η]‖²` over η ≥ 0.
//! * [`minimize_em1_over_eta`]: the piecewise quadratic refinement of η
//!   against `E_m1`.
//! * [`least_distance_linearized`]: the slack-penalized linearized
//!   feasibility problem of the constraint step.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::boxqp::solve_box_qp;
use crate::error::{check_len, Error, Result};
use crate::estimators::PointEval;
use crate::model::{NlpProblem, Polyhedron};
use crate::projection::project;
use crate::qp::solve_qp;

/// A smooth function with exact gradient and optional exact Hessian.
pub trait SmoothObjective {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Exact Hessian when available; finite differences of the gradient are
    /// used otherwise.
    fn hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

/// Objective built from closures.
pub struct FnObjective<F, G>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    pub value: F,
    pub gradient: G,
}

impl<F, G> SmoothObjective for FnObjective<F, G>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubsolveStatus {
    /// Projected-gradient norm at or below the tolerance.
    Stationary,
    /// The Newton step fell to roundoff size before the tolerance was met;
    /// the point is stationary to working precision.
    RoundoffLimited,
    MaxIters,
}

#[derive(Clone, Debug)]
pub struct SubsolveReport {
    pub minimizer: DVector<f64>,
    /// `‖x − P_Ω(x − ∇obj(x))‖` at exit.
    pub pg_norm: f64,
    pub iterations: usize,
    pub status: SubsolveStatus,
    /// Objective value at the start and after each iteration.
    pub objective_values: Vec<f64>,
    /// True when the starting point had to be projected onto Ω.
    pub start_projected: bool,
}

fn finite_difference_hessian<O: SmoothObjective + ?Sized>(obj: &O, x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let mut hm = DMatrix::zeros(n, n);
    for j in 0..n {
        let step = 1e-6 * (1.0 + x[j].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let col = (obj.gradient(&xp) - obj.gradient(&xm)) / (2.0 * step);
        hm.column_mut(j).copy_from(&col);
    }
    (&hm + hm.transpose()) * 0.5
}

/// Eigenvalue modification making `h` positive definite.
fn make_positive_definite(h: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0_f64, |a, &b| a.max(b.abs()));
    let floor = 1e-8 * scale;
    let lam = eig.eigenvalues.map(|l| l.abs().max(floor));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&lam) * v.transpose();
    (&out + out.transpose()) * 0.5
}

fn projected_gradient_norm(poly: &Polyhedron, x: &DVector<f64>, g: &DVector<f64>) -> Result<f64> {
    Ok((x - project(poly, &(x - g))?.y_star).norm())
}

/// Minimizes a smooth objective over Ω from `x0`.
pub fn minimize_over_polyhedron<O: SmoothObjective + ?Sized>(
    obj: &O,
    poly: &Polyhedron,
    x0: &DVector<f64>,
    inner_tol: f64,
    max_iters: usize,
) -> Result<SubsolveReport> {
    check_len("subsolve start", poly.dim(), x0.len())?;
    if !(inner_tol > 0.0) || max_iters == 0 {
        return Err(Error::Precondition("tolerance and iteration cap must be positive".into()));
    }
    let start_projected = !poly.is_feasible(x0, 0.0);
    let mut x = if start_projected {
        project(poly, x0)?.y_star
    } else {
        x0.clone()
    };
    let mut f = obj.value(&x);
    let mut g = obj.gradient(&x);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("objective at the starting point".into()));
    }
    let mut values = vec![f];
    let mut iterations = 0;
    loop {
        let pg = projected_gradient_norm(poly, &x, &g)?;
        if pg <= inner_tol {
            return Ok(SubsolveReport {
                minimizer: x,
                pg_norm: pg,
                iterations,
                status: SubsolveStatus::Stationary,
                objective_values: values,
                start_projected,
            });
        }
        if iterations >= max_iters {
            return Ok(SubsolveReport {
                minimizer: x,
                pg_norm: pg,
                iterations,
                status: SubsolveStatus::MaxIters,
                objective_values: values,
                start_projected,
            });
        }
        iterations += 1;
        let hess = obj.hessian(&x).unwrap_or_else(|| finite_difference_hessian(obj, &x));
        if hess.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("objective Hessian".into()));
        }
        let hpd = make_positive_definite(&hess);
        // Newton QP in y = x + d: ½ yᵀHy + (g − Hx)ᵀy over Ω.
        let newton = solve_qp(&hpd, &(&g - &hpd * &x), poly).map(|s| s.x);
        let mut candidates = Vec::with_capacity(2);
        if let Ok(y) = newton {
            candidates.push(y);
        }
        candidates.push(project(poly, &(&x - &g))?.y_star);

        let roundoff = 4.0 * f64::EPSILON * (1.0 + f.abs());
        let mut accepted = None;
        for y in &candidates {
            let d = y - &x;
            let slope = g.dot(&d);
            if d.norm() <= 4.0 * f64::EPSILON * (1.0 + x.norm()) {
                continue;
            }
            if slope >= 0.0 {
                continue;
            }
            let mut t = 1.0;
            for _ in 0..60 {
                let trial = if t == 1.0 { y.clone() } else { &x + &d * t };
                let ft = obj.value(&trial);
                if ft.is_finite() && ft <= f + 1e-4 * t * slope + roundoff {
                    accepted = Some((trial, ft));
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((xn, fn_)) = accepted else {
            return Ok(SubsolveReport {
                minimizer: x,
                pg_norm: pg,
                iterations,
                status: SubsolveStatus::RoundoffLimited,
                objective_values: values,
                start_projected,
            });
        };
        let step = (&xn - &x).norm();
        x = xn;
        f = fn_;
        g = obj.gradient(&x);
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("objective during inner iterations".into()));
        }
        values.push(f);
        if step <= 1e-15 * (1.0 + x.norm()) {
            let pg = projected_gradient_norm(poly, &x, &g)?;
            let status = if pg <= inner_tol {
                SubsolveStatus::Stationary
            } else {
                SubsolveStatus::RoundoffLimited
            };
            return Ok(SubsolveReport {
                minimizer: x,
                pg_norm: pg,
                iterations,
                status,
                objective_values: values,
                start_projected,
            });
        }
    }
}

/// Solution of the regularized multiplier fit.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiplierFit {
    pub nu: DVector<f64>,
    /// Stacked, zero on rows with infinite bounds.
    pub eta: DVector<f64>,
    /// Value of `E_m0 + γ‖[ν, η]‖²`.
    pub objective: f64,
}

/// `B = [J_hᵀ | J_r,Fᵀ]` restricted to the finite stacked rows `F`.
fn multiplier_basis(pe: &PointEval, omega: &Polyhedron, finite: &[usize]) -> DMatrix<f64> {
    let n = pe.x.len();
    let ell = pe.h.len();
    let jr = omega.stacked_jacobian();
    let mut b = DMatrix::zeros(n, ell + finite.len());
    b.columns_mut(0, ell).copy_from(&pe.jac_h.transpose());
    for (k, &i) in finite.iter().enumerate() {
        b.column_mut(ell + k).copy_from(&jr.row(i).transpose());
    }
    b
}

/// Minimizes `‖∇f + J_hᵀν + J_rᵀη‖² − ηᵀr(z) + γ(‖ν‖² + ‖η‖²)` over η ≥ 0.
pub fn minimize_em0_regularized(p: &NlpProblem, z: &DVector<f64>, gamma: f64) -> Result<MultiplierFit> {
    let pe = PointEval::new(p, z)?;
    minimize_em0_regularized_at(&pe, p.omega(), gamma)
}

pub fn minimize_em0_regularized_at(pe: &PointEval, omega: &Polyhedron, gamma: f64) -> Result<MultiplierFit> {
    if !(gamma > 0.0) {
        return Err(Error::Precondition(format!("gamma = {gamma} must be positive")));
    }
    let ell = pe.h.len();
    let finite = omega.finite_indices();
    let k = ell + finite.len();
    let b = multiplier_basis(pe, omega, &finite);
    let hm = (b.transpose() * &b + DMatrix::identity(k, k) * gamma) * 2.0;
    let mut l = b.tr_mul(&pe.grad_f) * 2.0;
    for (j, &i) in finite.iter().enumerate() {
        l[ell + j] -= pe.r[i];
    }
    let lo = DVector::from_fn(k, |i, _| if i < ell { f64::NEG_INFINITY } else { 0.0 });
    let hi = DVector::from_element(k, f64::INFINITY);
    let sol = solve_box_qp(&hm, &l, &lo, &hi, None)?;
    let nu = sol.v.rows(0, ell).into_owned();
    let mut eta = DVector::zeros(omega.num_stacked());
    for (j, &i) in finite.iter().enumerate() {
        eta[i] = sol.v[ell + j].max(0.0);
    }
    let objective = sol.objective + pe.grad_f.norm_squared();
    Ok(MultiplierFit { nu, eta, objective })
}

/// Relative distance to a kink below which a coordinate counts as on it.
const KINK_TOL: f64 = 1e-8;

/// Data of the η-refinement restricted to the finite rows: the objective is
/// `‖g₀ + Mη‖² + Σ_j min(s_j, η_j)²` with `M = J_r,Fᵀ` and `s = −r_F`.
#[derive(Clone, Debug)]
pub struct EtaProblem {
    pub g0: DVector<f64>,
    pub m: DMatrix<f64>,
    pub s: DVector<f64>,
    pub finite: Vec<usize>,
    pub num_stacked: usize,
}

impl EtaProblem {
    pub fn new(pe: &PointEval, omega: &Polyhedron, nu: &DVector<f64>) -> Result<Self> {
        check_len("nu", pe.h.len(), nu.len())?;
        let finite = omega.finite_indices();
        let jr = omega.stacked_jacobian();
        let n = pe.x.len();
        let mut m = DMatrix::zeros(n, finite.len());
        for (k, &i) in finite.iter().enumerate() {
            m.column_mut(k).copy_from(&jr.row(i).transpose());
        }
        let s = DVector::from_iterator(finite.len(), finite.iter().map(|&i| -pe.r[i]));
        Ok(Self {
            g0: &pe.grad_f + pe.jac_h.tr_mul(nu),
            m,
            s,
            finite,
            num_stacked: omega.num_stacked(),
        })
    }

    pub fn dim(&self) -> usize {
        self.finite.len()
    }

    /// Objective at a reduced η (finite rows only).
    pub fn value(&self, eta: &DVector<f64>) -> f64 {
        let g = &self.g0 + &self.m * eta;
        let phi: f64 = eta.iter().zip(self.s.iter()).map(|(e, s)| e.min(*s).powi(2)).sum();
        g.norm_squared() + phi
    }

    pub fn reduce(&self, eta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.finite.len(), self.finite.iter().map(|&i| eta[i]))
    }

    pub fn expand(&self, eta: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.num_stacked);
        for (k, &i) in self.finite.iter().enumerate() {
            out[i] = eta[k];
        }
        out
    }

    /// Solves the convex piece in which coordinate `j` uses the quadratic
    /// branch (`η_j ∈ [0, s_j]`) when `quad[j]` and the flat branch
    /// (`η_j ≥ max(s_j, 0)`) otherwise. Returns the reduced minimizer.
    pub fn solve_piece(&self, quad: &[bool], start: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        let k = self.dim();
        let mut hm = self.m.transpose() * &self.m * 2.0;
        let l = self.m.tr_mul(&self.g0) * 2.0;
        let mut lo = DVector::zeros(k);
        let mut hi = DVector::from_element(k, f64::INFINITY);
        for j in 0..k {
            if quad[j] {
                hm[(j, j)] += 2.0;
                hi[j] = self.s[j].max(0.0);
            } else {
                lo[j] = self.s[j].max(0.0);
            }
        }
        Ok(solve_box_qp(&hm, &l, &lo, &hi, start)?.v)
    }

    /// Local search over pieces from `start`: solve the piece containing
    /// the point, then move every coordinate sitting on (or within roundoff
    /// of) a kink to the other branch, until a switch stops paying off. A
    /// start near a kink is searched from both adjacent pieces.
    pub fn local_search(&self, start: &DVector<f64>) -> Result<DVector<f64>> {
        let k = self.dim();
        let start = start.map(|v| v.max(0.0));
        let quad: Vec<bool> = (0..k).map(|j| self.s[j] > 0.0 && start[j] < self.s[j]).collect();
        let near = self.near_kinks(&start);
        let mut best = self.search_from(&start, quad.clone())?;
        if !near.is_empty() {
            let mut flipped = quad;
            for &j in &near {
                flipped[j] = !flipped[j];
            }
            let other = self.search_from(&start, flipped)?;
            if self.value(&other) < self.value(&best) {
                best = other;
            }
        }
        Ok(best)
    }

    fn near_kinks(&self, eta: &DVector<f64>) -> Vec<usize> {
        (0..self.dim())
            .filter(|&j| self.s[j] > 0.0 && (eta[j] - self.s[j]).abs() <= KINK_TOL * (1.0 + self.s[j]))
            .collect()
    }

    fn search_from(&self, start: &DVector<f64>, mut quad: Vec<bool>) -> Result<DVector<f64>> {
        let mut eta = start.clone();
        let mut best = f64::INFINITY;
        for _ in 0..(4 * self.dim() + 8) {
            let cand = self.solve_piece(&quad, Some(&eta))?;
            let val = self.value(&cand);
            if val >= best {
                break;
            }
            best = val;
            eta = cand;
            let near = self.near_kinks(&eta);
            if near.is_empty() {
                break;
            }
            for j in near {
                quad[j] = !quad[j];
            }
        }
        Ok(eta)
    }

    /// Global minimizer by solving every piece.
    pub fn enumerate_pieces(&self) -> Result<DVector<f64>> {
        let k = self.dim();
        if k > 12 {
            return Err(Error::BoundExceeded(format!("{k} finite rows exceed 12")));
        }
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0u32..(1u32 << k) {
            let quad: Vec<bool> = (0..k).map(|j| mask >> j & 1 == 1 && self.s[j] > 0.0).collect();
            if (0..k).any(|j| mask >> j & 1 == 1 && self.s[j] <= 0.0) {
                continue;
            }
            let cand = self.solve_piece(&quad, None)?;
            let val = self.value(&cand);
            if best.as_ref().is_none_or(|(b, _)| val < *b) {
                best = Some((val, cand));
            }
        }
        Ok(best.map(|b| b.1).unwrap_or_else(|| DVector::zeros(0)))
    }
}

/// Result of the η-refinement.
#[derive(Clone, Debug, PartialEq)]
pub struct EtaRefinement {
    /// Stacked η′ ≥ 0.
    pub eta: DVector<f64>,
    /// `E_m1(z, ν, η′)`.
    pub em1: f64,
}

/// Minimizes `E_m1(z, ν, η)` over η ≥ 0 from the warm starts `η = 0` and
/// `warm` (typically the regularized fit), keeping the better result. With
/// `exact` set and at most 12 finite rows every piece is solved instead.
pub fn minimize_em1_over_eta(
    p: &NlpProblem,
    z: &DVector<f64>,
    nu: &DVector<f64>,
    warm: Option<&DVector<f64>>,
    exact: bool,
) -> Result<EtaRefinement> {
    let pe = PointEval::new(p, z)?;
    minimize_em1_over_eta_at(&pe, p.omega(), nu, warm, exact)
}

pub fn minimize_em1_over_eta_at(
    pe: &PointEval,
    omega: &Polyhedron,
    nu: &DVector<f64>,
    warm: Option<&DVector<f64>>,
    exact: bool,
) -> Result<EtaRefinement> {
    let ep = EtaProblem::new(pe, omega, nu)?;
    let k = ep.dim();
    let mut starts = vec![DVector::zeros(k)];
    if let Some(w) = warm {
        check_len("eta warm start", omega.num_stacked(), w.len())?;
        starts.push(ep.reduce(w));
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut consider = |eta: DVector<f64>| {
        let val = ep.value(&eta);
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, eta));
        }
    };
    if exact && k <= 12 {
        consider(ep.enumerate_pieces()?);
    }
    for s in &starts {
        // a warm start is never worse than what the search returns from it
        consider(s.map(|v| v.max(0.0)));
        consider(ep.local_search(s)?);
    }
    let (_, eta_r) = best.expect("at least one candidate");
    let eta = ep.expand(&eta_r);
    let em1 = pe.em1(omega, nu, &eta)?;
    Ok(EtaRefinement { eta, em1 })
}

/// Solution of the linearized least-distance problem.
#[derive(Clone, Debug, PartialEq)]
pub struct LeastDistance {
    pub w_bar: DVector<f64>,
    /// Slack `y = −h − J(w̄ − w)`.
    pub y: DVector<f64>,
    /// `√p · y`, the slack in the scaling used by the step-quality test.
    pub scaled_slack: DVector<f64>,
}

/// Solves
///
/// ```text
///   min ‖w − w_i‖² + p‖y‖²  s.t.  J(w − w_i) + y = −h,  w ∈ Ω
/// ```
///
/// as the projection of `(w_i, 0)` onto `{(w, ỹ) : Jw + ỹ/√p = Jw_i − h, w ∈ Ω}`
/// with `ỹ = √p·y`. Both blocks of the objective then carry unit weight, so
/// the subproblem stays well conditioned for the large penalties
/// `p = ‖h‖⁻²` used near feasibility.
pub fn least_distance_linearized(
    poly: &Polyhedron,
    w_i: &DVector<f64>,
    h_i: &DVector<f64>,
    j_i: &DMatrix<f64>,
    p_i: f64,
) -> Result<LeastDistance> {
    let n = poly.dim();
    let ell = h_i.len();
    check_len("linearization point", n, w_i.len())?;
    if j_i.shape() != (ell, n) {
        return Err(Error::DimensionMismatch {
            context: "linearization jacobian",
            expected: ell * n,
            got: j_i.len(),
        });
    }
    if !(p_i >= 1.0 && p_i.is_finite()) {
        return Err(Error::Precondition(format!("penalty {p_i} must be >= 1")));
    }
    let root = p_i.sqrt();
    let m = poly.num_rows();
    let mut a = DMatrix::zeros(m + ell, n + ell);
    a.view_mut((0, 0), (m, n)).copy_from(poly.a());
    a.view_mut((m, 0), (ell, n)).copy_from(j_i);
    for k in 0..ell {
        a[(m + k, n + k)] = 1.0 / root;
    }
    let rhs = j_i * w_i - h_i;
    let mut lo = DVector::zeros(m + ell);
    let mut hi = DVector::zeros(m + ell);
    lo.rows_mut(0, m).copy_from(poly.row_lo());
    hi.rows_mut(0, m).copy_from(poly.row_hi());
    lo.rows_mut(m, ell).copy_from(&rhs);
    hi.rows_mut(m, ell).copy_from(&rhs);
    let mut blo = DVector::from_element(n + ell, f64::NEG_INFINITY);
    let mut bhi = DVector::from_element(n + ell, f64::INFINITY);
    blo.rows_mut(0, n).copy_from(poly.box_lo());
    bhi.rows_mut(0, n).copy_from(poly.box_hi());
    let lifted = Polyhedron::new(a, lo, hi, blo, bhi)?;
    let mut c = DVector::zeros(n + ell);
    c.rows_mut(0, n).copy_from(w_i);
    let res = project(&lifted, &c)?;
    let w_bar = res.y_star.rows(0, n).into_owned();
    let y = -h_i - j_i * (&w_bar - w_i);
    let scaled_slack = res.y_star.rows(n, ell).into_owned();
    Ok(LeastDistance {
        w_bar,
        y,
        scaled_slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::model::{QuadraticConstraint, QuadraticNlpSpec};
    use crate::oracle::{brute_force_qp, DenseQp};
    use nalgebra::dvector;
    use proptest::prelude::*;

    const INF: f64 = f64::INFINITY;

    struct Quadratic {
        h: DMatrix<f64>,
        g: DVector<f64>,
    }

    impl SmoothObjective for Quadratic {
        fn value(&self, x: &DVector<f64>) -> f64 {
            0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            &self.h * x + &self.g
        }
    }

    fn simplex2() -> Polyhedron {
        Polyhedron::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            dvector![2.0],
            dvector![2.0],
            dvector![0.0, 0.0],
            dvector![INF, INF],
        )
        .unwrap()
    }

    #[test]
    fn minimizes_half_norm_on_line() {
        let obj = Quadratic {
            h: DMatrix::identity(2, 2),
            g: DVector::zeros(2),
        };
        let r = minimize_over_polyhedron(&obj, &simplex2(), &dvector![2.0, 0.0], 1e-10, 100).unwrap();
        assert!((r.minimizer - dvector![1.0, 1.0]).norm() < 1e-8);
        assert_eq!(r.status, SubsolveStatus::Stationary);
    }

    #[test]
    fn linear_objective_goes_to_vertex() {
        let obj = FnObjective {
            value: |x: &DVector<f64>| x[0] + x[1],
            gradient: |_x: &DVector<f64>| dvector![1.0, 1.0],
        };
        let poly = Polyhedron::from_box(dvector![0.0, 0.0], dvector![1.0, 1.0]).unwrap();
        let r = minimize_over_polyhedron(&obj, &poly, &dvector![0.7, 0.2], 1e-10, 100).unwrap();
        assert!(r.minimizer.norm() < 1e-12);
    }

    #[test]
    fn stationary_start_takes_no_iterations() {
        let obj = Quadratic {
            h: DMatrix::identity(2, 2),
            g: DVector::zeros(2),
        };
        let r = minimize_over_polyhedron(&obj, &simplex2(), &dvector![1.0, 1.0], 1e-10, 100).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.minimizer, dvector![1.0, 1.0]);
    }

    #[test]
    fn infeasible_start_is_projected() {
        let obj = Quadratic {
            h: DMatrix::identity(2, 2),
            g: DVector::zeros(2),
        };
        let r = minimize_over_polyhedron(&obj, &simplex2(), &dvector![5.0, 5.0], 1e-10, 100).unwrap();
        assert!(r.start_projected);
        assert!((r.minimizer - dvector![1.0, 1.0]).norm() < 1e-8);
    }

    #[test]
    fn nan_objective_is_an_error() {
        let obj = FnObjective {
            value: |_x: &DVector<f64>| f64::NAN,
            gradient: |_x: &DVector<f64>| dvector![1.0],
        };
        let poly = Polyhedron::from_box(dvector![0.0], dvector![1.0]).unwrap();
        let err = minimize_over_polyhedron(&obj, &poly, &dvector![0.5], 1e-10, 10).unwrap_err();
        assert!(matches!(err, Error::Evaluation(_)));
    }

    #[test]
    fn nonconvex_objective_descends() {
        // Rosenbrock in the box [−2, 2]²; minimum at (1, 1)
        let obj = FnObjective {
            value: |x: &DVector<f64>| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            gradient: |x: &DVector<f64>| {
                let b = x[1] - x[0] * x[0];
                dvector![-2.0 * (1.0 - x[0]) - 400.0 * x[0] * b, 200.0 * b]
            },
        };
        let poly = Polyhedron::from_box(dvector![-2.0, -2.0], dvector![2.0, 2.0]).unwrap();
        let r = minimize_over_polyhedron(&obj, &poly, &dvector![-1.2, 1.0], 1e-9, 500).unwrap();
        assert!((&r.minimizer - dvector![1.0, 1.0]).norm() < 1e-6, "{:?}", r);
        assert!(r.objective_values.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    fn scalar_problem(grad_f: f64, row_gradient: f64, slack: f64, with_eq: bool) -> NlpProblem {
        // n = 1, f = grad_f·x, optional h = x, Ω = [x₀ − slack, ∞) evaluated at x₀ = 1
        let _ = row_gradient;
        let cons = if with_eq {
            vec![QuadraticConstraint {
                p: DMatrix::zeros(1, 1),
                a: dvector![1.0],
                b: -1.0,
            }]
        } else {
            vec![]
        };
        let box_lo = if slack.is_finite() { 1.0 - slack } else { -INF };
        QuadraticNlpSpec::new(
            "scalar",
            DMatrix::zeros(1, 1),
            dvector![grad_f],
            cons,
            Polyhedron::from_box(dvector![box_lo], dvector![INF]).unwrap(),
        )
        .unwrap()
        .to_problem()
    }

    #[test]
    fn em0_fit_scalar_equality() {
        let p = scalar_problem(1.0, 0.0, INF, true);
        let fit = minimize_em0_regularized(&p, &dvector![1.0], 1.0).unwrap();
        assert!((fit.nu[0] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn em0_fit_zero_when_stationary_interior() {
        let p = scalar_problem(0.0, 0.0, 1.0, false);
        let fit = minimize_em0_regularized(&p, &dvector![1.0], 1e-8).unwrap();
        assert!(fit.eta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn em0_fit_scalar_inequality() {
        // ∇r = −1 (lower bound), −r(z) = 1: (1 − η)² + η + η² → η = 1/4
        let p = scalar_problem(1.0, -1.0, 1.0, false);
        let fit = minimize_em0_regularized(&p, &dvector![1.0], 1.0).unwrap();
        assert!((fit.eta[0] - 0.25).abs() < 1e-14);
        assert!((fit.objective - (0.75f64.powi(2) + 0.25 + 0.0625)).abs() < 1e-14);
    }

    #[test]
    fn em1_refinement_scalar() {
        // (1 − η)² + min(1, η)² → η′ = 0.5 with value 0.5
        let p = scalar_problem(1.0, -1.0, 1.0, false);
        let r = minimize_em1_over_eta(&p, &dvector![1.0], &DVector::zeros(0), None, false).unwrap();
        assert!((r.eta[0] - 0.5).abs() < 1e-14);
        assert!((r.em1 - 0.5).abs() < 1e-14);
    }

    #[test]
    fn em1_refinement_zero_at_stationary_point() {
        let p = scalar_problem(0.0, 0.0, 1.0, false);
        let r = minimize_em1_over_eta(&p, &dvector![1.0], &DVector::zeros(0), None, false).unwrap();
        assert_eq!(r.em1, 0.0);
        assert!(r.eta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn em1_refinement_escapes_local_piece_with_warm_start() {
        // (1.5 − η)² + min(1, η)²: local minimum 1.125 at η = 0.75 and
        // global minimum 1 at η = 1.5
        let p = scalar_problem(1.5, -1.0, 1.0, false);
        let z = dvector![1.0];
        let fit = minimize_em0_regularized(&p, &z, 1e-10).unwrap();
        let r = minimize_em1_over_eta(&p, &z, &DVector::zeros(0), Some(&fit.eta), false).unwrap();
        assert!((r.em1 - 1.0).abs() < 1e-9);
        let cold = minimize_em1_over_eta(&p, &z, &DVector::zeros(0), None, false).unwrap();
        assert!((cold.em1 - 1.125).abs() < 1e-12);
        let exact = minimize_em1_over_eta(&p, &z, &DVector::zeros(0), None, true).unwrap();
        assert!((exact.em1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn least_distance_scalar() {
        let poly = Polyhedron::from_box(dvector![-10.0], dvector![10.0]).unwrap();
        let r = least_distance_linearized(
            &poly,
            &dvector![1.0],
            &dvector![1.0],
            &DMatrix::from_element(1, 1, 1.0),
            1.0,
        )
        .unwrap();
        assert!((r.w_bar[0] - 0.5).abs() < 1e-14);
        assert!((r.y[0] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn least_distance_feasible_is_fixed() {
        let poly = Polyhedron::from_box(dvector![-10.0, -10.0], dvector![10.0, 10.0]).unwrap();
        let w = dvector![1.0, 2.0];
        let r = least_distance_linearized(
            &poly,
            &w,
            &dvector![0.0],
            &DMatrix::from_row_slice(1, 2, &[1.0, 3.0]),
            5.0,
        )
        .unwrap();
        assert!((r.w_bar - w).norm() < 1e-15);
        assert!(r.y.norm() < 1e-15);
    }

    #[test]
    fn least_distance_large_penalty_approaches_gauss_newton() {
        let poly = Polyhedron::from_box(dvector![-10.0, -10.0], dvector![10.0, 10.0]).unwrap();
        let w = dvector![1.0, 2.0];
        let j = DMatrix::from_row_slice(1, 2, &[1.0, 3.0]);
        let h = dvector![0.3];
        let r = least_distance_linearized(&poly, &w, &h, &j, 1e8).unwrap();
        let jjt = (&j * j.transpose())[(0, 0)];
        let gn = &w - j.transpose() * (&h / jjt);
        assert!((r.w_bar - gn).norm() < 1e-4);
        assert!(r.y.norm() < 1e-4);
    }

    #[test]
    fn least_distance_residual_and_candidate_bound() {
        let cp = corpus::circle_interior();
        let poly = cp.problem.omega().clone();
        let w = dvector![1.1, 1.15];
        let h = cp.problem.constraints(&w);
        let j = cp.problem.jacobian(&w);
        let p = (1.0 / h.norm_squared()).max(1.0);
        let r = least_distance_linearized(&poly, &w, &h, &j, p).unwrap();
        assert!((&j * (&r.w_bar - &w) + &r.y + &h).norm() <= 1e-9);
        let obj = |wb: &DVector<f64>, y: &DVector<f64>| (wb - &w).norm_squared() + p * y.norm_squared();
        let jjt = (&j * j.transpose())[(0, 0)];
        let gn = &w - j.transpose() * (&h / jjt);
        assert!(obj(&r.w_bar, &r.y) <= obj(&gn, &DVector::zeros(1)) + 1e-12);
    }

    fn random_qp() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>, Polyhedron)> {
        (1usize..=4, 0usize..=2).prop_flat_map(|(n, m)| {
            (
                prop::collection::vec(-1.0..1.0f64, n * n),
                prop::collection::vec(-2.0..2.0f64, n),
                prop::collection::vec(-1.0..1.0f64, m * n),
                prop::collection::vec((-1.0..0.0f64, 0.0..1.0f64), m),
                prop::collection::vec((-1.5..0.0f64, 0.0..1.5f64), n),
            )
                .prop_map(move |(hs, g, a, rows, boxes)| {
                    let b = DMatrix::from_row_slice(n, n, &hs);
                    let h = b.transpose() * &b + DMatrix::identity(n, n) * 0.1;
                    let poly = Polyhedron::new(
                        DMatrix::from_row_slice(m, n, &a),
                        DVector::from_iterator(m, rows.iter().map(|r| r.0)),
                        DVector::from_iterator(m, rows.iter().map(|r| r.1)),
                        DVector::from_iterator(n, boxes.iter().map(|b| b.0)),
                        DVector::from_iterator(n, boxes.iter().map(|b| b.1)),
                    )
                    .unwrap();
                    (h, DVector::from_vec(g), poly)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn smooth_engine_matches_brute_force_on_quadratics((h, g, poly) in random_qp()) {
            let obj = Quadratic { h: h.clone(), g: g.clone() };
            let x0 = DVector::zeros(poly.dim());
            let r = minimize_over_polyhedron(&obj, &poly, &x0, 1e-11, 200).unwrap();
            let oracle = brute_force_qp(&DenseQp::new(h, g, poly.clone()).unwrap()).unwrap();
            prop_assert!((&r.minimizer - &oracle.x).norm() <= 1e-7);
            prop_assert!(poly.is_feasible(&r.minimizer, 1e-9));
            prop_assert!(r.objective_values.windows(2).all(|w| w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs())));
        }
    }
}
