use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

/// A polyhedron in two-sided general form
///
/// ```text
///   Ω = { x : row_lo <= A x <= row_hi,  box_lo <= x <= box_hi }
/// ```
///
/// Bounds may be infinite. Every routine that needs inequality multipliers
/// works with the stacked residual
///
/// ```text
///   r(x) = [ row_lo - A x ; A x - row_hi ; box_lo - x ; x - box_hi ] <= 0
/// ```
///
/// of length `2 * m_rows + 2 * n`, and multipliers are indexed in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyhedron {
    a: DMatrix<f64>,
    row_lo: DVector<f64>,
    row_hi: DVector<f64>,
    box_lo: DVector<f64>,
    box_hi: DVector<f64>,
}

/// Which block of the stacked residual an index belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StackedRow {
    RowLower(usize),
    RowUpper(usize),
    BoxLower(usize),
    BoxUpper(usize),
}

impl Polyhedron {
    pub fn new(
        a: DMatrix<f64>,
        row_lo: DVector<f64>,
        row_hi: DVector<f64>,
        box_lo: DVector<f64>,
        box_hi: DVector<f64>,
    ) -> Result<Self> {
        let n = box_lo.len();
        let m = a.nrows();
        check_len("polyhedron box_hi", n, box_hi.len())?;
        check_len("polyhedron A columns", n, a.ncols())?;
        check_len("polyhedron row_lo", m, row_lo.len())?;
        check_len("polyhedron row_hi", m, row_hi.len())?;
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPolyhedron("A has non-finite entries".into()));
        }
        for (name, lo, hi) in [("row", &row_lo, &row_hi), ("box", &box_lo, &box_hi)] {
            for i in 0..lo.len() {
                if lo[i].is_nan() || hi[i].is_nan() {
                    return Err(Error::InvalidPolyhedron(format!("{name} bound {i} is NaN")));
                }
                if lo[i] > hi[i] {
                    return Err(Error::InvalidPolyhedron(format!(
                        "{name} bound {i}: lower {} exceeds upper {}",
                        lo[i], hi[i]
                    )));
                }
                if lo[i] == f64::INFINITY || hi[i] == f64::NEG_INFINITY {
                    return Err(Error::InvalidPolyhedron(format!(
                        "{name} bound {i} is empty ({}, {})",
                        lo[i], hi[i]
                    )));
                }
            }
        }
        Ok(Self {
            a,
            row_lo,
            row_hi,
            box_lo,
            box_hi,
        })
    }

    /// Box-only polyhedron.
    pub fn from_box(box_lo: DVector<f64>, box_hi: DVector<f64>) -> Result<Self> {
        let n = box_lo.len();
        Self::new(
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DVector::zeros(0),
            box_lo,
            box_hi,
        )
    }

    /// All of ℝⁿ.
    pub fn unconstrained(n: usize) -> Self {
        Self {
            a: DMatrix::zeros(0, n),
            row_lo: DVector::zeros(0),
            row_hi: DVector::zeros(0),
            box_lo: DVector::from_element(n, f64::NEG_INFINITY),
            box_hi: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        self.box_lo.len()
    }

    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    /// Length of the stacked residual, `2 * m_rows + 2 * n`.
    pub fn num_stacked(&self) -> usize {
        2 * self.num_rows() + 2 * self.dim()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn row_lo(&self) -> &DVector<f64> {
        &self.row_lo
    }

    pub fn row_hi(&self) -> &DVector<f64> {
        &self.row_hi
    }

    pub fn box_lo(&self) -> &DVector<f64> {
        &self.box_lo
    }

    pub fn box_hi(&self) -> &DVector<f64> {
        &self.box_hi
    }

    pub fn stacked_row(&self, index: usize) -> StackedRow {
        let m = self.num_rows();
        let n = self.dim();
        if index < m {
            StackedRow::RowLower(index)
        } else if index < 2 * m {
            StackedRow::RowUpper(index - m)
        } else if index < 2 * m + n {
            StackedRow::BoxLower(index - 2 * m)
        } else {
            StackedRow::BoxUpper(index - 2 * m - n)
        }
    }

    /// Bound value attached to a stacked index.
    pub fn stacked_bound(&self, index: usize) -> f64 {
        match self.stacked_row(index) {
            StackedRow::RowLower(j) => self.row_lo[j],
            StackedRow::RowUpper(j) => self.row_hi[j],
            StackedRow::BoxLower(i) => self.box_lo[i],
            StackedRow::BoxUpper(i) => self.box_hi[i],
        }
    }

    /// `true` for stacked rows whose bound is finite. Rows with infinite
    /// bounds are never active and their multipliers are pinned to zero.
    pub fn finite_mask(&self) -> Vec<bool> {
        (0..self.num_stacked())
            .map(|i| self.stacked_bound(i).is_finite())
            .collect()
    }

    pub fn finite_indices(&self) -> Vec<usize> {
        (0..self.num_stacked())
            .filter(|&i| self.stacked_bound(i).is_finite())
            .collect()
    }

    /// r(x) in stacked order. Entries tied to infinite bounds are −∞.
    pub fn stacked_residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("stacked_residual x", self.dim(), x.len())?;
        let m = self.num_rows();
        let n = self.dim();
        let ax = &self.a * x;
        let mut r = DVector::zeros(self.num_stacked());
        for j in 0..m {
            r[j] = self.row_lo[j] - ax[j];
            r[m + j] = ax[j] - self.row_hi[j];
        }
        for i in 0..n {
            r[2 * m + i] = self.box_lo[i] - x[i];
            r[2 * m + n + i] = x[i] - self.box_hi[i];
        }
        Ok(r)
    }

    /// Membership test for Ω with absolute tolerance `tol`.
    pub fn is_feasible(&self, x: &DVector<f64>, tol: f64) -> bool {
        match self.stacked_residual(x) {
            Ok(r) => r.iter().all(|&v| v <= tol),
            Err(_) => false,
        }
    }

    /// Largest stacked violation, clipped at zero.
    pub fn max_violation(&self, x: &DVector<f64>) -> Result<f64> {
        let r = self.stacked_residual(x)?;
        Ok(r.iter().fold(0.0_f64, |acc, &v| acc.max(v)))
    }

    /// The constant Jacobian of r, `[-A; A; -I; I]` (stacked × n).
    pub fn stacked_jacobian(&self) -> DMatrix<f64> {
        let m = self.num_rows();
        let n = self.dim();
        let mut j = DMatrix::zeros(self.num_stacked(), n);
        for row in 0..m {
            for col in 0..n {
                j[(row, col)] = -self.a[(row, col)];
                j[(m + row, col)] = self.a[(row, col)];
            }
        }
        for i in 0..n {
            j[(2 * m + i, i)] = -1.0;
            j[(2 * m + n + i, i)] = 1.0;
        }
        j
    }

    /// `J_rᵀ μ` without forming the stacked Jacobian.
    pub fn stacked_transpose_mul(&self, mu: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("stacked multiplier", self.num_stacked(), mu.len())?;
        let m = self.num_rows();
        let n = self.dim();
        let row_part = DVector::from_fn(m, |j, _| mu[m + j] - mu[j]);
        let mut out = self.a.tr_mul(&row_part);
        for i in 0..n {
            out[i] += mu[2 * m + n + i] - mu[2 * m + i];
        }
        Ok(out)
    }

    /// Clamp `x` into the box part of Ω.
    pub fn clamp_to_box(&self, x: &mut DVector<f64>) {
        for i in 0..self.dim() {
            x[i] = x[i].clamp(self.box_lo[i], self.box_hi[i]);
        }
    }

    /// New polyhedron with extra equality rows `rows · x = rhs` appended.
    pub fn with_equality_rows(&self, rows: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<Self> {
        check_len("appended rows columns", self.dim(), rows.ncols())?;
        check_len("appended rows rhs", rows.nrows(), rhs.len())?;
        let m = self.num_rows();
        let k = rows.nrows();
        let n = self.dim();
        let mut a = DMatrix::zeros(m + k, n);
        a.rows_mut(0, m).copy_from(&self.a);
        a.rows_mut(m, k).copy_from(rows);
        let mut lo = DVector::zeros(m + k);
        let mut hi = DVector::zeros(m + k);
        lo.rows_mut(0, m).copy_from(&self.row_lo);
        hi.rows_mut(0, m).copy_from(&self.row_hi);
        lo.rows_mut(m, k).copy_from(rhs);
        hi.rows_mut(m, k).copy_from(rhs);
        Self::new(a, lo, hi, self.box_lo.clone(), self.box_hi.clone())
    }
}
