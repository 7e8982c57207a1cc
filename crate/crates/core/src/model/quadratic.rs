//! Quadratic problem family and its text file format.
//!
//! A problem file is TOML with the following keys:
//!
//! | key          | type                 | meaning                                         |
//! |--------------|----------------------|-------------------------------------------------|
//! | `name`       | string               | problem name                                    |
//! | `n`          | integer              | number of variables                             |
//! | `ell`        | integer              | number of equality constraints                  |
//! | `Q`          | n×n array of arrays  | objective Hessian (symmetric)                   |
//! | `c`          | array, length n      | objective linear term                           |
//! | `A`          | m×n array of arrays  | polyhedral row matrix (optional, default none)  |
//! | `row_lo`     | array, length m      | row lower bounds                                |
//! | `row_hi`     | array, length m      | row upper bounds                                |
//! | `box_lo`     | array, length n      | variable lower bounds (optional, default -inf)  |
//! | `box_hi`     | array, length n      | variable upper bounds (optional, default +inf)  |
//! | `x0`         | array, length n      | starting point (optional)                       |
//! | `lambda0`    | array, length ell    | starting equality multipliers (optional)        |
//! | `[[constraint]]` | table, ell entries | `P` (n×n, optional), `a` (length n), `b` (float) |
//! | `[solution]` | table                | reference `x`, `lambda`, optional stacked `mu`  |
//!
//! The objective is `f(x) = ½ xᵀQx + cᵀx` and constraint `j` is
//! `h_j(x) = ½ xᵀP_j x + a_jᵀx + b_j`. Bounds accept the TOML literals
//! `inf` and `-inf`; integers are accepted wherever floats are.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use toml::{Table, Value};

use super::{NlpProblem, Polyhedron};
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// One quadratic equality constraint `½ xᵀPx + aᵀx + b = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticConstraint {
    pub p: DMatrix<f64>,
    pub a: DVector<f64>,
    pub b: f64,
}

/// A reference KKT triple shipped with a problem file.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSolution {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub mu: Option<DVector<f64>>,
}

/// Quadratic objective plus quadratic equality constraints over a polyhedron.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticNlpSpec {
    pub name: String,
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub constraints: Vec<QuadraticConstraint>,
    pub omega: Polyhedron,
    pub x0: Option<DVector<f64>>,
    pub lambda0: Option<DVector<f64>>,
    pub solution: Option<ReferenceSolution>,
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    (m - m.transpose()).amax() <= SYMMETRY_TOL * scale
}

impl QuadraticNlpSpec {
    pub fn new(
        name: impl Into<String>,
        q: DMatrix<f64>,
        c: DVector<f64>,
        constraints: Vec<QuadraticConstraint>,
        omega: Polyhedron,
    ) -> Result<Self> {
        let definition = Self {
            name: name.into(),
            q,
            c,
            constraints,
            omega,
            x0: None,
            lambda0: None,
            solution: None,
        };
        definition.validate()?;
        Ok(definition)
    }

    pub fn dim(&self) -> usize {
        self.omega.dim()
    }

    pub fn num_eq(&self) -> usize {
        self.constraints.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let bad = |msg: String| Err(Error::InvalidProblem(msg));
        if self.q.shape() != (n, n) {
            return bad(format!("Q has shape {:?}, expected ({n}, {n})", self.q.shape()));
        }
        if !is_symmetric(&self.q) {
            return bad("Q is not symmetric".into());
        }
        if self.c.len() != n {
            return bad(format!("c has length {}, expected {n}", self.c.len()));
        }
        for (j, con) in self.constraints.iter().enumerate() {
            if con.p.shape() != (n, n) {
                return bad(format!("constraint {j}: P has shape {:?}", con.p.shape()));
            }
            if !is_symmetric(&con.p) {
                return bad(format!("constraint {j}: P is not symmetric"));
            }
            if con.a.len() != n {
                return bad(format!("constraint {j}: a has length {}", con.a.len()));
            }
            if !con.b.is_finite() {
                return bad(format!("constraint {j}: b is not finite"));
            }
        }
        let finite = self.q.iter().chain(self.c.iter()).all(|v| v.is_finite())
            && self
                .constraints
                .iter()
                .all(|c| c.p.iter().chain(c.a.iter()).all(|v| v.is_finite()));
        if !finite {
            return bad("non-finite coefficient".into());
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != n {
                return bad(format!("x0 has length {}, expected {n}", x0.len()));
            }
        }
        if let Some(l0) = &self.lambda0 {
            if l0.len() != self.num_eq() {
                return bad(format!("lambda0 has length {}", l0.len()));
            }
        }
        if let Some(sol) = &self.solution {
            if sol.x.len() != n || sol.lambda.len() != self.num_eq() {
                return bad("solution has wrong dimensions".into());
            }
            if let Some(mu) = &sol.mu {
                if mu.len() != self.omega.num_stacked() {
                    return bad("solution mu has wrong length".into());
                }
            }
        }
        Ok(())
    }

    /// Problem whose evaluators implement the quadratic formulas exactly.
    pub fn to_problem(&self) -> NlpProblem {
        let q = Arc::new(self.q.clone());
        let c = Arc::new(self.c.clone());
        let cons = Arc::new(self.constraints.clone());
        let ell = cons.len();
        let n = self.dim();

        let (q1, c1) = (q.clone(), c.clone());
        let f = Arc::new(move |x: &DVector<f64>| 0.5 * x.dot(&(&*q1 * x)) + c1.dot(x));
        let (q2, c2) = (q.clone(), c.clone());
        let grad = Arc::new(move |x: &DVector<f64>| &*q2 * x + &*c2);
        let cons1 = cons.clone();
        let h = Arc::new(move |x: &DVector<f64>| {
            DVector::from_iterator(
                ell,
                cons1.iter().map(|k| 0.5 * x.dot(&(&k.p * x)) + k.a.dot(x) + k.b),
            )
        });
        let cons2 = cons.clone();
        let jac = Arc::new(move |x: &DVector<f64>| {
            let mut j = DMatrix::zeros(ell, n);
            for (row, k) in cons2.iter().enumerate() {
                let g = &k.p * x + &k.a;
                j.row_mut(row).copy_from(&g.transpose());
            }
            j
        });
        let (q3, cons3) = (q, cons);
        let hess = Arc::new(move |_x: &DVector<f64>, w: &DVector<f64>| {
            let mut hm = (*q3).clone();
            for (k, wk) in cons3.iter().zip(w.iter()) {
                hm += &k.p * *wk;
            }
            hm
        });
        NlpProblem::new(self.name.clone(), ell, self.omega.clone(), f, grad, h, jac)
            .with_hessian(hess)
    }

    /// Parse the TOML problem format described in the module docs.
    pub fn parse(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| {
            let location = match e.span() {
                Some(span) => {
                    let line = text[..span.start].matches('\n').count() + 1;
                    format!("line {line}")
                }
                None => "document".to_string(),
            };
            Error::Parse {
                location,
                message: e.message().to_string(),
            }
        })?;
        let name = match table.get("name") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(field_err("name", "expected a string")),
            None => "unnamed".to_string(),
        };
        let n = get_usize(&table, "n")?;
        let ell = get_usize(&table, "ell")?;
        let q = get_matrix(&table, "Q", Some(n), n)?;
        let c = get_vector(&table, "c", n)?;
        let a = match table.get("A") {
            Some(_) => get_matrix(&table, "A", None, n)?,
            None => DMatrix::zeros(0, n),
        };
        let m = a.nrows();
        let row_lo = opt_vector(&table, "row_lo", m)?.unwrap_or_else(|| DVector::zeros(m));
        let row_hi = opt_vector(&table, "row_hi", m)?.unwrap_or_else(|| DVector::zeros(m));
        if m > 0 && (!table.contains_key("row_lo") || !table.contains_key("row_hi")) {
            return Err(field_err("row_lo", "A is given but row bounds are missing"));
        }
        let box_lo = opt_vector(&table, "box_lo", n)?
            .unwrap_or_else(|| DVector::from_element(n, f64::NEG_INFINITY));
        let box_hi = opt_vector(&table, "box_hi", n)?
            .unwrap_or_else(|| DVector::from_element(n, f64::INFINITY));
        let omega = Polyhedron::new(a, row_lo, row_hi, box_lo, box_hi)?;

        let mut constraints = Vec::new();
        if let Some(v) = table.get("constraint") {
            let arr = v
                .as_array()
                .ok_or_else(|| field_err("constraint", "expected an array of tables"))?;
            for (j, item) in arr.iter().enumerate() {
                let t = item
                    .as_table()
                    .ok_or_else(|| field_err(&format!("constraint[{j}]"), "expected a table"))?;
                let ctx = |k: &str| format!("constraint[{j}].{k}");
                let p = match t.get("P") {
                    Some(_) => get_matrix(t, "P", Some(n), n).map_err(|e| relabel(e, &ctx("P")))?,
                    None => DMatrix::zeros(n, n),
                };
                let av = get_vector(t, "a", n).map_err(|e| relabel(e, &ctx("a")))?;
                let b = match t.get("b") {
                    Some(v) => to_f64(v).ok_or_else(|| field_err(&ctx("b"), "expected a number"))?,
                    None => 0.0,
                };
                constraints.push(QuadraticConstraint { p, a: av, b });
            }
        }
        if constraints.len() != ell {
            return Err(field_err(
                "ell",
                &format!("declares {ell} constraints but {} are given", constraints.len()),
            ));
        }
        let mut definition = Self {
            name,
            q,
            c,
            constraints,
            omega,
            x0: opt_vector(&table, "x0", n)?,
            lambda0: opt_vector(&table, "lambda0", ell)?,
            solution: None,
        };
        if let Some(v) = table.get("solution") {
            let t = v
                .as_table()
                .ok_or_else(|| field_err("solution", "expected a table"))?;
            let x = get_vector(t, "x", n).map_err(|e| relabel(e, "solution.x"))?;
            let lambda = get_vector(t, "lambda", ell).map_err(|e| relabel(e, "solution.lambda"))?;
            let mu = opt_vector(t, "mu", definition.omega.num_stacked()).map_err(|e| relabel(e, "solution.mu"))?;
            definition.solution = Some(ReferenceSolution { x, lambda, mu });
        }
        definition.validate()?;
        Ok(definition)
    }

    /// Serialize to the TOML problem format. Parsing the output reproduces
    /// every coefficient bit for bit.
    pub fn to_text(&self) -> String {
        let n = self.dim();
        let mut t = Table::new();
        t.insert("name".into(), Value::String(self.name.clone()));
        t.insert("n".into(), Value::Integer(n as i64));
        t.insert("ell".into(), Value::Integer(self.num_eq() as i64));
        t.insert("Q".into(), matrix_value(&self.q));
        t.insert("c".into(), vector_value(&self.c));
        if self.omega.num_rows() > 0 {
            t.insert("A".into(), matrix_value(self.omega.a()));
            t.insert("row_lo".into(), vector_value(self.omega.row_lo()));
            t.insert("row_hi".into(), vector_value(self.omega.row_hi()));
        }
        t.insert("box_lo".into(), vector_value(self.omega.box_lo()));
        t.insert("box_hi".into(), vector_value(self.omega.box_hi()));
        if let Some(x0) = &self.x0 {
            t.insert("x0".into(), vector_value(x0));
        }
        if let Some(l0) = &self.lambda0 {
            t.insert("lambda0".into(), vector_value(l0));
        }
        if !self.constraints.is_empty() {
            let arr = self
                .constraints
                .iter()
                .map(|k| {
                    let mut ct = Table::new();
                    ct.insert("P".into(), matrix_value(&k.p));
                    ct.insert("a".into(), vector_value(&k.a));
                    ct.insert("b".into(), Value::Float(k.b));
                    Value::Table(ct)
                })
                .collect();
            t.insert("constraint".into(), Value::Array(arr));
        }
        if let Some(sol) = &self.solution {
            let mut st = Table::new();
            st.insert("x".into(), vector_value(&sol.x));
            st.insert("lambda".into(), vector_value(&sol.lambda));
            if let Some(mu) = &sol.mu {
                st.insert("mu".into(), vector_value(mu));
            }
            t.insert("solution".into(), Value::Table(st));
        }
        toml::to_string(&t).expect("problem tables always serialize")
    }
}

/// Parse a problem file into an [`NlpProblem`].
pub fn load_problem(text: &str) -> Result<NlpProblem> {
    Ok(QuadraticNlpSpec::parse(text)?.to_problem())
}

fn field_err(field: &str, message: &str) -> Error {
    Error::Parse {
        location: format!("field `{field}`"),
        message: message.to_string(),
    }
}

fn relabel(e: Error, field: &str) -> Error {
    match e {
        Error::Parse { message, .. } => field_err(field, &message),
        other => other,
    }
}

fn to_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn get_usize(t: &Table, key: &str) -> Result<usize> {
    match t.get(key) {
        Some(Value::Integer(i)) if *i >= 0 => Ok(*i as usize),
        Some(_) => Err(field_err(key, "expected a nonnegative integer")),
        None => Err(field_err(key, "missing")),
    }
}

fn parse_vector(v: &Value, key: &str, len: usize) -> Result<DVector<f64>> {
    let arr = v.as_array().ok_or_else(|| field_err(key, "expected an array"))?;
    if arr.len() != len {
        return Err(field_err(
            key,
            &format!("expected {len} entries, found {}", arr.len()),
        ));
    }
    let mut out = DVector::zeros(len);
    for (i, item) in arr.iter().enumerate() {
        out[i] = to_f64(item).ok_or_else(|| field_err(&format!("{key}[{i}]"), "expected a number"))?;
    }
    Ok(out)
}

fn get_vector(t: &Table, key: &str, len: usize) -> Result<DVector<f64>> {
    let v = t.get(key).ok_or_else(|| field_err(key, "missing"))?;
    parse_vector(v, key, len)
}

fn opt_vector(t: &Table, key: &str, len: usize) -> Result<Option<DVector<f64>>> {
    t.get(key).map(|v| parse_vector(v, key, len)).transpose()
}

fn get_matrix(t: &Table, key: &str, rows: Option<usize>, cols: usize) -> Result<DMatrix<f64>> {
    let v = t.get(key).ok_or_else(|| field_err(key, "missing"))?;
    let arr = v.as_array().ok_or_else(|| field_err(key, "expected an array of rows"))?;
    if let Some(r) = rows {
        if arr.len() != r {
            return Err(field_err(key, &format!("expected {r} rows, found {}", arr.len())));
        }
    }
    let mut m = DMatrix::zeros(arr.len(), cols);
    for (i, row) in arr.iter().enumerate() {
        let rv = parse_vector(row, &format!("{key}[{i}]"), cols)?;
        m.row_mut(i).copy_from(&rv.transpose());
    }
    Ok(m)
}

fn vector_value(v: &DVector<f64>) -> Value {
    Value::Array(v.iter().map(|&x| Value::Float(x)).collect())
}

fn matrix_value(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array(m.row(i).iter().map(|&x| Value::Float(x)).collect()))
            .collect(),
    )
}
