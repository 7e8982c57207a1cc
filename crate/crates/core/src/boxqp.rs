//! Bound-constrained convex quadratic programs with a possibly singular
//! Hessian.
//!
//! `min ½ vᵀHv + lᵀv  s.t.  lo ≤ v ≤ hi` by a primal active-set method.
//! Face subproblems are solved through a symmetric eigendecomposition, which
//! stays accurate when H has eigenvalues many orders of magnitude apart. On a
//! face where the gradient has a component in the null space of H the
//! method follows that zero-curvature descent direction to the nearest bound.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_len, Error, Result};

#[derive(Clone, Debug)]
pub struct BoxQpSolution {
    pub v: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

fn objective(h: &DMatrix<f64>, l: &DVector<f64>, v: &DVector<f64>) -> f64 {
    0.5 * v.dot(&(h * v)) + l.dot(v)
}

/// Solves the box QP starting from `start` (clamped into the box).
pub fn solve_box_qp(
    h: &DMatrix<f64>,
    l: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    start: Option<&DVector<f64>>,
) -> Result<BoxQpSolution> {
    let n = l.len();
    check_len("box qp hessian", n, h.nrows())?;
    check_len("box qp hessian", n, h.ncols())?;
    check_len("box qp lower", n, lo.len())?;
    check_len("box qp upper", n, hi.len())?;
    if h.iter().chain(l.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Evaluation("box QP data".into()));
    }
    let mut v = match start {
        Some(s) => s.clone(),
        None => DVector::zeros(n),
    };
    for i in 0..n {
        if !v[i].is_finite() {
            v[i] = 0.0;
        }
        v[i] = v[i].clamp(lo[i], hi[i]);
        if !v[i].is_finite() {
            v[i] = if lo[i].is_finite() { lo[i] } else { hi[i] };
        }
    }
    let scale = 1.0 + h.amax() + l.amax();
    let zero_tol = 1e-14 * scale;
    let grad_tol = 1e-13 * scale;
    // fixed[i]: Some(bound value) when the variable is held at a bound
    let mut fixed: Vec<bool> = (0..n).map(|i| v[i] == lo[i] || v[i] == hi[i]).collect();
    let max_iter = 20 * (n + 1) * (n + 1) + 100;
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::SubsolverFailure {
                residual: projected_gradient(h, l, lo, hi, &v).amax(),
            });
        }
        let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
        let g = h * &v + l;
        let mut d = DVector::zeros(n);
        let mut full_newton = true;
        if !free.is_empty() {
            let k = free.len();
            let hff = DMatrix::from_fn(k, k, |a, b| h[(free[a], free[b])]);
            let gf = DVector::from_fn(k, |a, _| g[free[a]]);
            let eig = SymmetricEigen::new(hff);
            let lam_max = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
            let thresh = 1e-13 * lam_max.max(1e-300);
            let mut df = DVector::zeros(k);
            let mut null_part = DVector::zeros(k);
            for (idx, &lam) in eig.eigenvalues.iter().enumerate() {
                let u = eig.eigenvectors.column(idx);
                let c = u.dot(&gf);
                if lam > thresh {
                    df -= u * (c / lam);
                } else {
                    null_part -= u * c;
                }
            }
            if null_part.norm() > zero_tol {
                // Zero curvature with a descent component: move to a bound.
                df = null_part;
                full_newton = false;
            }
            for (a, &i) in free.iter().enumerate() {
                d[i] = df[a];
            }
        }
        // Ratio test along d.
        let mut t = if full_newton { 1.0 } else { f64::INFINITY };
        let mut block = None;
        for &i in &free {
            if d[i] < 0.0 && lo[i].is_finite() {
                let ti = (lo[i] - v[i]) / d[i];
                if ti < t {
                    t = ti;
                    block = Some((i, lo[i]));
                }
            } else if d[i] > 0.0 && hi[i].is_finite() {
                let ti = (hi[i] - v[i]) / d[i];
                if ti < t {
                    t = ti;
                    block = Some((i, hi[i]));
                }
            }
        }
        if !t.is_finite() {
            return Err(Error::Internal("box QP is unbounded below".into()));
        }
        let t = t.max(0.0);
        if d.amax() > 0.0 {
            v += &d * t;
        }
        if let Some((i, b)) = block {
            v[i] = b;
            fixed[i] = true;
            continue;
        }
        if !full_newton {
            continue;
        }
        // Face optimum: release the fixed variable with the worst multiplier.
        let g = h * &v + l;
        let mut worst = grad_tol;
        let mut release = None;
        for i in 0..n {
            if !fixed[i] || lo[i] == hi[i] {
                continue;
            }
            let wrong = if v[i] == lo[i] { -g[i] } else { g[i] };
            if wrong > worst {
                worst = wrong;
                release = Some(i);
            }
        }
        match release {
            Some(i) => fixed[i] = false,
            None => {
                return Ok(BoxQpSolution {
                    objective: objective(h, l, &v),
                    v,
                    iterations,
                })
            }
        }
    }
}

/// `v − clamp(v − ∇, lo, hi)`.
pub fn projected_gradient(
    h: &DMatrix<f64>,
    l: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    v: &DVector<f64>,
) -> DVector<f64> {
    let g = h * v + l;
    DVector::from_fn(v.len(), |i, _| v[i] - (v[i] - g[i]).clamp(lo[i], hi[i]))
}
