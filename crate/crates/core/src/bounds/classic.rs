use nalgebra::{DMatrix, DVector};

use crate::conic::{ConicBackend, ConicProblem, InteriorPoint, Sense, SolveStatus};
use crate::error::{QpError, Result};
use crate::linalg::{null_space, smat, svec, svec_index, svec_len};
use crate::model::{Polytope, QpInstance, SymMatrix};

/// Best convex underestimation bound of `min x'Qx` over the standard simplex:
/// `max l  s.t.  Q - l ee' - N >= 0,  N >= 0`.
///
/// With `nonneg_shifted` the matrix is first shifted by `t ee'` so that every
/// entry is nonnegative and `t` is subtracted from the result.
pub fn stqp_conv_bound(q: &SymMatrix, nonneg_shifted: bool) -> Result<f64> {
    let n = q.order();
    if n == 0 {
        return Err(QpError::Dimension("empty matrix".into()));
    }
    let mut qd = q.to_dense();
    let t = if nonneg_shifted { (-qd.min()).max(0.0) } else { 0.0 };
    qd.add_scalar_mut(t);

    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let nvar = 1 + pairs.len();
    let len = svec_len(n);
    let mut g = DMatrix::zeros(len, nvar);
    g.set_column(0, &svec(&DMatrix::from_element(n, n, 1.0)));
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let mut e = DMatrix::zeros(n, n);
        e[(i, j)] = 1.0;
        e[(j, i)] = 1.0;
        g.set_column(1 + k, &svec(&e));
    }
    let mut c = DVector::zeros(nvar);
    c[0] = 1.0;
    let mut p = ConicProblem::new(Sense::Maximize, c);
    let mut gn = DMatrix::zeros(pairs.len(), nvar);
    for k in 0..pairs.len() {
        gn[(k, 1 + k)] = -1.0;
    }
    p.push_nonneg(gn, DVector::zeros(pairs.len()));
    p.push_psd(n, g, svec(&qd));
    let sol = InteriorPoint::default().solve(&p);
    if !sol.is_optimal() {
        return Err(QpError::Numerical(format!("StQP bound ended with {:?}", sol.status)));
    }
    Ok(sol.x[0] - t)
}

/// `min x'Q0x + 2c0'x  s.t.  eq_a x = eq_d,  0 <= x <= e`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxQp {
    pub q0: SymMatrix,
    pub c0: DVector<f64>,
    pub eq_a: DMatrix<f64>,
    pub eq_d: DVector<f64>,
}

impl BoxQp {
    pub fn n(&self) -> usize {
        self.c0.len()
    }

    /// Box rows followed by each equality as a pair of inequalities.
    pub fn to_instance(&self) -> Result<QpInstance> {
        let n = self.n();
        let box_rows = Polytope::unit_box(n);
        let e = self.eq_a.nrows();
        let mut a = DMatrix::zeros(2 * e, n);
        let mut b = DVector::zeros(2 * e);
        for i in 0..e {
            for j in 0..n {
                a[(2 * i, j)] = self.eq_a[(i, j)];
                a[(2 * i + 1, j)] = -self.eq_a[(i, j)];
            }
            b[2 * i] = self.eq_d[i];
            b[2 * i + 1] = -self.eq_d[i];
        }
        QpInstance::new("box_qp", self.q0.clone(), self.c0.clone(), box_rows.with_rows(&a, &b))
    }
}

#[derive(Debug, Clone)]
pub struct SrltResult {
    pub value: f64,
    pub x: DVector<f64>,
    pub x_mat: SymMatrix,
    pub status: SolveStatus,
}

/// Shor relaxation with first-level RLT products of the bounds. The equality
/// products `X a_i = d_i x` and `a_i'x = d_i` are imposed by writing the
/// moment matrix over the null space of the equalities.
pub fn srlt_bound(bq: &BoxQp) -> Result<SrltResult> {
    let n = bq.n();
    if bq.q0.order() != n || bq.eq_a.ncols() != n || bq.eq_a.nrows() != bq.eq_d.len() {
        return Err(QpError::Dimension("inconsistent box QP data".into()));
    }
    let (x0, basis) = if bq.eq_a.nrows() == 0 {
        (DVector::zeros(n), DMatrix::identity(n, n))
    } else {
        let svd = bq.eq_a.clone().svd(true, true);
        let x0 = svd
            .solve(&bq.eq_d, 1e-10 * svd.singular_values.max())
            .map_err(|e| QpError::Numerical(e.to_string()))?;
        let res = (&bq.eq_a * &x0 - &bq.eq_d).amax();
        if res > 1e-9 * (1.0 + bq.eq_d.amax()) {
            return Err(QpError::EmptyPolytope);
        }
        (x0, null_space(&bq.eq_a, n, 1e-10))
    };
    let k = basis.ncols();
    let s = k + 1;
    let mut t = DMatrix::zeros(n + 1, s);
    t.view_mut((0, 0), (n, k)).copy_from(&basis);
    t.view_mut((0, k), (n, 1)).copy_from(&x0);
    t[(n, k)] = 1.0;
    // svec coefficients of the full moment entry (a, b).
    let entry = |a: usize, b: usize| {
        let ta = t.row(a).transpose();
        let tb = t.row(b).transpose();
        svec(&(&ta * tb.transpose()))
    };
    let one = n;
    let mut rows: Vec<DVector<f64>> = Vec::new();
    for i in 0..n {
        for j in i..n {
            // X_ij >= 0 and 1 - x_i - x_j + X_ij >= 0
            rows.push(-entry(i, j));
            rows.push(-(entry(one, one) - entry(i, one) - entry(j, one) + entry(i, j)));
        }
        for j in 0..n {
            // x_j - X_ij >= 0
            rows.push(-(entry(j, one) - entry(i, j)));
        }
    }
    let nvar = svec_len(s);
    let mut gmat = DMatrix::from_fn(rows.len(), nvar, |i, j| rows[i][j]);
    // Constant parts sit on M_kk = 1; move them to h.
    let kk = svec_index(s, k, k);
    let mut h = DVector::zeros(rows.len());
    for i in 0..rows.len() {
        h[i] = -gmat[(i, kk)];
        gmat[(i, kk)] = 0.0;
    }
    let mut obj = DMatrix::zeros(n + 1, n + 1);
    obj.view_mut((0, 0), (n, n)).copy_from(&bq.q0.to_dense());
    for j in 0..n {
        obj[(j, n)] = bq.c0[j];
        obj[(n, j)] = bq.c0[j];
    }
    let cvec = svec(&(t.transpose() * &obj * &t));
    let constant = cvec[kk];
    let mut cfree = cvec;
    cfree[kk] = 0.0;

    let mut p = ConicProblem::new(Sense::Minimize, cfree);
    p.push_nonneg(gmat, h);
    let mut gp = -DMatrix::identity(nvar, nvar);
    gp[(kk, kk)] = 0.0;
    let mut hp = DVector::zeros(nvar);
    hp[kk] = 1.0;
    p.push_psd(s, gp, hp);
    let sol = InteriorPoint::default().solve(&p);
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(QpError::EmptyPolytope),
        st => return Err(QpError::Numerical(format!("SRLT ended with {st:?}"))),
    }
    let mut v = sol.x.clone();
    v[kk] = 1.0;
    let m = smat(v.as_slice(), s);
    let full = &t * m * t.transpose();
    let x = full.view((0, n), (n, 1)).column(0).into_owned();
    let xm = full.view((0, 0), (n, n)).into_owned();
    Ok(SrltResult {
        value: sol.objective_value + constant,
        x,
        x_mat: SymMatrix::from_symmetric_part(&xm),
        status: sol.status,
    })
}
