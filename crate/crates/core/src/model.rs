//! Problem data: `min x'Qx + 2c'x  s.t.  Ax <= b`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::{solve_lp, SolveStatus};
use crate::error::{QpError, Result};

/// Absolute tolerance for LP-based nonnegativity tests.
pub const TOL_FEAS: f64 = 1e-8;

/// Symmetric matrix stored as its packed upper triangle (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    order: usize,
    entries: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(order: usize) -> Self {
        Self {
            order,
            entries: vec![0.0; order * (order + 1) / 2],
        }
    }

    /// Packs `m`, rejecting asymmetry above `tol` (absolute).
    pub fn from_dense(m: &DMatrix<f64>, tol: f64) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(QpError::Dimension(format!(
                "expected a square matrix of order >= 1, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                let (u, l) = (m[(i, j)], m[(j, i)]);
                if !u.is_finite() || !l.is_finite() {
                    return Err(QpError::InvalidInput("non-finite matrix entry".into()));
                }
                if (u - l).abs() > tol {
                    return Err(QpError::InvalidInput(format!(
                        "matrix is not symmetric at ({i}, {j}): {u} vs {l}"
                    )));
                }
                out.set(i, j, 0.5 * (u + l));
            }
        }
        Ok(out)
    }

    /// Packs the symmetric part of `m`.
    pub fn from_symmetric_part(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                out.set(i, j, 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
        out
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    fn pos(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.order - i * (i + 1) / 2 + j
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[self.pos(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let p = self.pos(i, j);
        self.entries[p] = v;
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.order, self.order, |i, j| self.get(i, j))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        crate::linalg::min_eigenvalue(&self.to_dense())
    }
}

/// `{x : Ax <= b}`. Boundedness is not checked here.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Polytope {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(QpError::Dimension("polytope needs m >= 1 and n >= 1".into()));
        }
        if a.nrows() != b.len() {
            return Err(QpError::Dimension(format!(
                "A has {} rows but b has length {}",
                a.nrows(),
                b.len()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(QpError::InvalidInput("non-finite polytope data".into()));
        }
        Ok(Self { a, b })
    }

    /// Axis-aligned box `lo <= x <= hi` as rows `x <= hi` followed by `-x <= -lo`.
    pub fn boxed(lo: &[f64], hi: &[f64]) -> Self {
        let n = lo.len();
        let mut a = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for k in 0..n {
            a[(k, k)] = 1.0;
            b[k] = hi[k];
            a[(n + k, k)] = -1.0;
            b[n + k] = -lo[k];
        }
        Self { a, b }
    }

    pub fn unit_box(n: usize) -> Self {
        Self::boxed(&vec![0.0; n], &vec![1.0; n])
    }

    pub fn nrows(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    /// A copy with the rows `extra_a x <= extra_b` appended.
    pub fn with_rows(&self, extra_a: &DMatrix<f64>, extra_b: &DVector<f64>) -> Self {
        let (m, n, k) = (self.nrows(), self.dim(), extra_a.nrows());
        let mut a = DMatrix::zeros(m + k, n);
        a.view_mut((0, 0), (m, n)).copy_from(&self.a);
        a.view_mut((m, 0), (k, n)).copy_from(extra_a);
        let mut b = DVector::zeros(m + k);
        b.rows_mut(0, m).copy_from(&self.b);
        b.rows_mut(m, k).copy_from(extra_b);
        Self { a, b }
    }

    pub fn with_row(&self, row: &DVector<f64>, rhs: f64) -> Self {
        self.with_rows(&DMatrix::from_row_slice(1, row.len(), row.as_slice()), &DVector::from_element(1, rhs))
    }

    /// Largest violation `max_i (A_i x - b_i)` (negative when strictly interior).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b).max()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.max_violation(x) <= tol
    }
}

/// `alpha(x) = grad' x + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFunc {
    pub grad: DVector<f64>,
    pub offset: f64,
}

impl AffineFunc {
    pub fn new(grad: DVector<f64>, offset: f64) -> Self {
        Self { grad, offset }
    }

    pub fn zero(n: usize) -> Self {
        Self::new(DVector::zeros(n), 0.0)
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.grad.dot(x) + self.offset
    }

    /// `max(|offset|, max_k |grad_k|)`.
    pub fn norm(&self) -> f64 {
        self.grad.iter().fold(self.offset.abs(), |acc, v| acc.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpInstance {
    pub name: String,
    pub q: SymMatrix,
    pub c: DVector<f64>,
    pub polytope: Polytope,
    pub known_optimum: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
struct EqualityJson {
    #[serde(rename = "E")]
    e: Vec<Vec<f64>>,
    f: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceJson {
    name: String,
    n: usize,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    c: Vec<f64>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    equalities: Option<EqualityJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    known_optimum: Option<f64>,
}

fn dense_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(QpError::Dimension(format!(
            "{what} row {bad} has length {} (expected {ncols})",
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl QpInstance {
    pub fn new(
        name: impl Into<String>,
        q: SymMatrix,
        c: DVector<f64>,
        polytope: Polytope,
    ) -> Result<Self> {
        let n = q.order();
        if c.len() != n || polytope.dim() != n {
            return Err(QpError::Dimension(format!(
                "Q has order {n}, c has length {}, A has {} columns",
                c.len(),
                polytope.dim()
            )));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(QpError::InvalidInput("non-finite linear term".into()));
        }
        Ok(Self {
            name: name.into(),
            q,
            c,
            polytope,
            known_optimum: None,
        })
    }

    /// Convenience constructor from dense data; `q` must be symmetric within 1e-12.
    pub fn from_dense(
        name: impl Into<String>,
        q: DMatrix<f64>,
        c: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Result<Self> {
        Self::new(name, SymMatrix::from_dense(&q, 1e-12)?, c, Polytope::new(a, b)?)
    }

    pub fn with_known_optimum(mut self, v: f64) -> Self {
        self.known_optimum = Some(v);
        self
    }

    pub fn n(&self) -> usize {
        self.q.order()
    }

    pub fn m(&self) -> usize {
        self.polytope.nrows()
    }

    pub fn q_dense(&self) -> DMatrix<f64> {
        self.q.to_dense()
    }

    /// Same objective over a different polytope.
    pub fn with_polytope(&self, polytope: Polytope) -> Self {
        Self {
            name: self.name.clone(),
            q: self.q.clone(),
            c: self.c.clone(),
            polytope,
            known_optimum: None,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: InstanceJson =
            serde_json::from_str(s).map_err(|e| QpError::InvalidInput(e.to_string()))?;
        let n = raw.n;
        if raw.q.len() != n {
            return Err(QpError::Dimension(format!("Q has {} rows, n = {n}", raw.q.len())));
        }
        let q = dense_rows(&raw.q, n, "Q")?;
        let mut a = dense_rows(&raw.a, n, "A")?;
        let mut b = DVector::from_vec(raw.b);
        if let Some(eq) = raw.equalities {
            let e = dense_rows(&eq.e, n, "E")?;
            if e.nrows() != eq.f.len() {
                return Err(QpError::Dimension("E and f lengths differ".into()));
            }
            let f = DVector::from_vec(eq.f);
            let p = Polytope { a, b }.with_rows(&e, &f).with_rows(&(-&e), &(-&f));
            a = p.a;
            b = p.b;
        }
        let mut inst = Self::from_dense(raw.name, q, DVector::from_vec(raw.c), a, b)?;
        inst.known_optimum = raw.known_optimum;
        Ok(inst)
    }

    pub fn to_json_string(&self) -> String {
        let q = self.q_dense();
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
        };
        let raw = InstanceJson {
            name: self.name.clone(),
            n: self.n(),
            q: rows(&q),
            c: self.c.iter().cloned().collect(),
            a: rows(&self.polytope.a),
            b: self.polytope.b.iter().cloned().collect(),
            equalities: None,
            known_optimum: self.known_optimum,
        };
        serde_json::to_string_pretty(&raw).expect("instance serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| QpError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())
            .map_err(|e| QpError::Io(format!("{}: {e}", path.display())))
    }
}

/// Affine multipliers `alpha_i` and level `l` for the certificate
/// `q - l + sum_i alpha_i(x)(A_i x - b_i) >= 0` on all of `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierCertificate {
    pub alphas: Vec<AffineFunc>,
    pub level: f64,
}

pub fn eval_objective(inst: &QpInstance, x: &DVector<f64>) -> Result<f64> {
    if x.len() != inst.n() {
        return Err(QpError::Dimension(format!(
            "point has length {}, instance has n = {}",
            x.len(),
            inst.n()
        )));
    }
    Ok(objective(&inst.q_dense(), &inst.c, x))
}

pub(crate) fn objective(q: &DMatrix<f64>, c: &DVector<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(q * x)) + 2.0 * c.dot(x)
}

/// Gram matrix `[[M, v], [v', k]]` of the quadratic
/// `q(x) - level + sum_i alpha_i(x)(A_i x - b_i)`.
pub fn certificate_gram(inst: &QpInstance, cert: &MultiplierCertificate) -> Result<SymMatrix> {
    let n = inst.n();
    let m = inst.m();
    if cert.alphas.len() != m {
        return Err(QpError::Dimension(format!(
            "certificate has {} multipliers, polytope has {m} rows",
            cert.alphas.len()
        )));
    }
    if let Some(bad) = cert.alphas.iter().position(|a| a.grad.len() != n) {
        return Err(QpError::Dimension(format!("multiplier {bad} has wrong length")));
    }
    let a = &inst.polytope.a;
    let b = &inst.polytope.b;
    let mut quad = inst.q_dense();
    let mut lin = inst.c.clone();
    let mut k = -cert.level;
    for (i, alpha) in cert.alphas.iter().enumerate() {
        let ai = a.row(i).transpose();
        let outer = &alpha.grad * ai.transpose();
        quad += (&outer + outer.transpose()) * 0.5;
        lin += (&ai * alpha.offset - &alpha.grad * b[i]) * 0.5;
        k -= alpha.offset * b[i];
    }
    let mut g = DMatrix::zeros(n + 1, n + 1);
    g.view_mut((0, 0), (n, n)).copy_from(&quad);
    for j in 0..n {
        g[(j, n)] = lin[j];
        g[(n, j)] = lin[j];
    }
    g[(n, n)] = k;
    Ok(SymMatrix::from_symmetric_part(&g))
}

/// Result of an LP nonnegativity test for an affine function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonnegCheck {
    pub nonnegative: bool,
    /// `min_P alpha`, `-inf` when the LP is unbounded.
    pub min_value: f64,
    pub status: SolveStatus,
}

pub fn is_nonnegative_on(alpha: &AffineFunc, p: &Polytope) -> Result<NonnegCheck> {
    if alpha.grad.len() != p.dim() {
        return Err(QpError::Dimension("multiplier and polytope dimensions differ".into()));
    }
    let sol = solve_lp(&alpha.grad, &p.a, &p.b, None);
    match sol.status {
        SolveStatus::Infeasible => Err(QpError::EmptyPolytope),
        SolveStatus::Unbounded => Ok(NonnegCheck {
            nonnegative: false,
            min_value: f64::NEG_INFINITY,
            status: sol.status,
        }),
        SolveStatus::Optimal => {
            let v = sol.objective_value + alpha.offset;
            Ok(NonnegCheck {
                nonnegative: v >= -TOL_FEAS,
                min_value: v,
                status: sol.status,
            })
        }
        other => Err(QpError::Numerical(format!("nonnegativity LP ended with {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interval() -> Polytope {
        Polytope::new(
            DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn objective_examples() {
        let inst = QpInstance::from_dense(
            "bilinear",
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        assert_eq!(eval_objective(&inst, &DVector::from_vec(vec![1.0, 1.0])).unwrap(), 2.0);
        assert!(eval_objective(&inst, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn gram_of_exact_identity_vanishes() {
        let inst = QpInstance::new(
            "neg-square",
            SymMatrix::from_dense(&DMatrix::from_element(1, 1, -1.0), 0.0).unwrap(),
            DVector::zeros(1),
            interval(),
        )
        .unwrap();
        let cert = MultiplierCertificate {
            alphas: vec![
                AffineFunc::new(DVector::from_element(1, 1.0), 1.0),
                AffineFunc::zero(1),
            ],
            level: -1.0,
        };
        let g = certificate_gram(&inst, &cert).unwrap();
        assert!(g.to_dense().norm() < 1e-15);
    }

    #[test]
    fn symmetric_storage_round_trip() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let s = SymMatrix::from_dense(&m, 1e-12).unwrap();
        assert_eq!(s.entries(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(s.to_dense(), m);
        let mut bad = m.clone();
        bad[(0, 1)] += 1e-9;
        assert!(SymMatrix::from_dense(&bad, 1e-12).is_err());
    }

    #[test]
    fn nonnegativity_examples() {
        let p = interval();
        let up = AffineFunc::new(DVector::from_element(1, 1.0), 1.0);
        assert!(is_nonnegative_on(&up, &p).unwrap().nonnegative);
        let half = AffineFunc::new(DVector::from_element(1, 1.0), -0.5);
        let r = is_nonnegative_on(&half, &p).unwrap();
        assert!(!r.nonnegative);
        assert!((r.min_value + 0.5).abs() < 1e-7);
        let sq = Polytope::unit_box(2);
        let diff = AffineFunc::new(DVector::from_vec(vec![1.0, -1.0]), 1.0);
        assert!(is_nonnegative_on(&diff, &sq).unwrap().nonnegative);
    }

    #[test]
    fn nonnegativity_unbounded_flagged() {
        let half_line = Polytope::new(DMatrix::from_element(1, 1, -1.0), DVector::zeros(1)).unwrap();
        let down = AffineFunc::new(DVector::from_element(1, -1.0), 0.0);
        let r = is_nonnegative_on(&down, &half_line).unwrap();
        assert!(!r.nonnegative);
        assert_eq!(r.status, SolveStatus::Unbounded);
    }

    #[test]
    fn json_equalities_become_row_pairs() {
        let text = r#"{"name":"simplex","n":2,"Q":[[-1,0],[0,-1]],"c":[0,0],
            "A":[[-1,0],[0,-1]],"b":[0,0],"equalities":{"E":[[1,1]],"f":[1]},"known_optimum":-0.5}"#;
        let inst = QpInstance::from_json_str(text).unwrap();
        assert_eq!(inst.m(), 4);
        assert_eq!(inst.known_optimum, Some(-0.5));
        let back = QpInstance::from_json_str(&inst.to_json_string()).unwrap();
        assert_eq!(back, inst);
        let asym = r#"{"name":"x","n":2,"Q":[[0,1],[0.5,0]],"c":[0,0],"A":[[1,0]],"b":[1]}"#;
        assert!(QpInstance::from_json_str(asym).is_err());
    }
}
