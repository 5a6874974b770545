use nalgebra::{DMatrix, DVector};

use crate::conic::{ConicProblem, InteriorPoint, ConicBackend, Sense};
use crate::error::{QpError, Result};
use crate::linalg::{min_eigenvalue, rank, symmetrize};
use crate::model::{AffineFunc, QpInstance, TOL_FEAS};

/// Affine multipliers with `x'Qx + 2c'x + c0 = sum_i alpha_i(x)(A_i x - b_i)`.
#[derive(Debug, Clone)]
pub struct Representation {
    pub alphas: Vec<AffineFunc>,
    /// Max-norm of the Gram residual.
    pub residual: f64,
}

/// Solves the symmetrized linear system for `(d_i, f_i)` in the least-squares
/// sense. Fails with `RankDeficient` when the rows `(A_i, -b_i)` do not span
/// `R^(n+1)`.
pub fn exact_representation(inst: &QpInstance, c0: f64) -> Result<Representation> {
    let n = inst.n();
    let m = inst.m();
    let s = n + 1;
    let mut r = DMatrix::zeros(m, s);
    r.view_mut((0, 0), (m, n)).copy_from(&inst.polytope.a);
    for i in 0..m {
        r[(i, n)] = -inst.polytope.b[i];
    }
    if rank(&r, 1e-10) < s {
        return Err(QpError::RankDeficient);
    }
    let mut target = DMatrix::zeros(s, s);
    target.view_mut((0, 0), (n, n)).copy_from(&inst.q_dense());
    for j in 0..n {
        target[(j, n)] = inst.c[j];
        target[(n, j)] = inst.c[j];
    }
    target[(n, n)] = c0;

    // Unknown u_i = (d_i; f_i) stacked; entry (p, q) of sum_i sym(u_i r_i').
    let pairs: Vec<(usize, usize)> = (0..s).flat_map(|p| (p..s).map(move |q| (p, q))).collect();
    let mut sys = DMatrix::zeros(pairs.len(), m * s);
    let mut rhs = DVector::zeros(pairs.len());
    for (row, &(p, q)) in pairs.iter().enumerate() {
        for i in 0..m {
            sys[(row, i * s + p)] += 0.5 * r[(i, q)];
            sys[(row, i * s + q)] += 0.5 * r[(i, p)];
        }
        rhs[row] = target[(p, q)];
    }
    let svd = sys.clone().svd(true, true);
    let sol = svd
        .solve(&rhs, 1e-12 * svd.singular_values.max())
        .map_err(|e| QpError::Numerical(e.to_string()))?;
    let residual = (&sys * &sol - &rhs).amax();
    let alphas = (0..m)
        .map(|i| AffineFunc::new(sol.rows(i * s, n).into_owned(), sol[i * s + n]))
        .collect();
    Ok(Representation { alphas, residual })
}

/// Sufficient certificate that `xbar` is a global minimizer.
#[derive(Debug, Clone)]
pub struct ExactnessCertificate {
    pub d_list: Vec<DVector<f64>>,
    pub f_list: Vec<f64>,
    /// `alpha_i(x) = lambda_i0 + sum_j lambda_ij (b_j - A_j x)`, stored as
    /// `(lambda_i0, lambda_i)`.
    pub farkas: Vec<(f64, DVector<f64>)>,
    pub psd_margin: f64,
    pub gradient_residual: f64,
    pub complementarity_residual: f64,
}

/// Searches for Farkas multipliers satisfying the PSD, gradient and
/// complementarity conditions at `xbar`. Returns `None` when none is found.
pub fn hgg_exactness_check(inst: &QpInstance, xbar: &DVector<f64>) -> Result<Option<ExactnessCertificate>> {
    let n = inst.n();
    let m = inst.m();
    if xbar.len() != n {
        return Err(QpError::Dimension(format!("point has length {}, n = {n}", xbar.len())));
    }
    let a = &inst.polytope.a;
    let b = &inst.polytope.b;
    let slack = b - a * xbar;
    if slack.min() < -TOL_FEAS * (1.0 + b.amax()) {
        return Err(QpError::InvalidInput("xbar is not feasible".into()));
    }
    let active: Vec<bool> = slack.iter().map(|&v| v <= TOL_FEAS * (1.0 + b.amax())).collect();
    let q = inst.q_dense();

    // Variables: t, then per row i: lambda_i0, lambda_i1..lambda_im.
    let per = m + 1;
    let nvar = 1 + m * per;
    let lam0 = |i: usize| 1 + i * per;
    let lam = |i: usize, j: usize| 1 + i * per + 1 + j;
    let mut c = DVector::zeros(nvar);
    c[0] = 1.0;
    let mut p = ConicProblem::new(Sense::Maximize, c);

    let mut g = DMatrix::zeros(nvar, nvar);
    let mut h = DVector::zeros(nvar);
    g[(0, 0)] = 1.0;
    h[0] = 1.0;
    for v in 1..nvar {
        g[(v, v)] = -1.0;
    }
    p.push_nonneg(g, h);

    // Q - sum_ij lambda_ij sym(A_j' A_i) - t I >= 0.
    let len = crate::linalg::svec_len(n);
    let mut gp = DMatrix::zeros(len, nvar);
    gp.set_column(0, &crate::linalg::svec(&DMatrix::identity(n, n)));
    for i in 0..m {
        let ai = a.row(i).transpose();
        for j in 0..m {
            let aj = a.row(j).transpose();
            let o = &aj * ai.transpose();
            gp.set_column(lam(i, j), &crate::linalg::svec(&((&o + o.transpose()) * 0.5)));
        }
    }
    p.push_psd(n, gp, crate::linalg::svec(&q));

    // Gradient: Qx + c + 1/2 sum_i [alpha_i(x) A_i' + (A_i x - b_i) d_i] = 0,
    // with d_i = -A' lambda_i.
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let grad0 = &q * xbar + &inst.c;
    for k in 0..n {
        let mut row = DVector::zeros(nvar);
        for i in 0..m {
            let aik = a[(i, k)];
            row[lam0(i)] += 0.5 * aik;
            for j in 0..m {
                row[lam(i, j)] += 0.5 * (aik * slack[j] + slack[i] * a[(j, k)]);
            }
        }
        rows.push(row);
        rhs.push(-grad0[k]);
    }
    for i in (0..m).filter(|&i| !active[i]) {
        let mut row = DVector::zeros(nvar);
        row[lam0(i)] = 1.0;
        for j in 0..m {
            row[lam(i, j)] = slack[j];
        }
        rows.push(row);
        rhs.push(0.0);
    }
    let aeq = DMatrix::from_fn(rows.len(), nvar, |i, j| rows[i][j]);
    p.push_eq(aeq, DVector::from_vec(rhs));

    let sol = InteriorPoint::default().solve(&p);
    if !sol.is_optimal() || sol.x[0] < -1e-7 {
        return Ok(None);
    }
    let x = &sol.x;
    let farkas: Vec<(f64, DVector<f64>)> = (0..m)
        .map(|i| {
            let l = DVector::from_fn(m, |j, _| x[lam(i, j)].max(0.0));
            (x[lam0(i)].max(0.0), l)
        })
        .collect();
    let d_list: Vec<DVector<f64>> = farkas.iter().map(|(_, l)| -(a.transpose() * l)).collect();
    let f_list: Vec<f64> = farkas.iter().map(|(l0, l)| l0 + b.dot(l)).collect();

    let mut hess = q.clone();
    let mut grad = grad0.clone();
    let mut compl = 0.0_f64;
    for i in 0..m {
        let ai = a.row(i).transpose();
        let o = &d_list[i] * ai.transpose();
        hess += (&o + o.transpose()) * 0.5;
        let alpha = d_list[i].dot(xbar) + f_list[i];
        grad += (&ai * alpha - &d_list[i] * slack[i]) * 0.5;
        if !active[i] {
            compl = compl.max(alpha.abs());
        }
    }
    let scale = 1.0 + q.amax() + inst.c.amax();
    let psd_margin = min_eigenvalue(&symmetrize(&hess));
    let gradient_residual = grad.amax();
    if psd_margin < -1e-6 * scale || gradient_residual > 1e-6 * scale || compl > 1e-6 * scale {
        return Ok(None);
    }
    Ok(Some(ExactnessCertificate {
        d_list,
        f_list,
        farkas,
        psd_margin,
        gradient_residual,
        complementarity_residual: compl,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Polytope, SymMatrix};

    fn neg_square() -> QpInstance {
        let p = Polytope::new(DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), DVector::from_vec(vec![1.0, 0.0])).unwrap();
        QpInstance::new("t", SymMatrix::from_dense(&DMatrix::from_element(1, 1, -1.0), 0.0).unwrap(), DVector::zeros(1), p).unwrap()
    }

    #[test]
    fn representation_of_one_minus_square() {
        let inst = neg_square();
        let rep = exact_representation(&inst, 1.0).unwrap();
        assert!(rep.residual < 1e-10);
    }

    #[test]
    fn rank_deficient_rows() {
        let p = Polytope::new(DMatrix::from_column_slice(1, 1, &[1.0]), DVector::from_vec(vec![1.0])).unwrap();
        let inst = QpInstance::new("t", SymMatrix::zeros(1), DVector::zeros(1), p).unwrap();
        assert_eq!(exact_representation(&inst, 0.0).unwrap_err(), QpError::RankDeficient);
    }

    #[test]
    fn certificate_at_right_endpoint() {
        let inst = neg_square();
        let cert = hgg_exactness_check(&inst, &DVector::from_element(1, 1.0)).unwrap();
        let cert = cert.expect("certificate exists");
        assert!(cert.psd_margin >= -1e-7);
        // Interior point of a concave objective is not a minimizer.
        assert!(hgg_exactness_check(&inst, &DVector::from_element(1, 0.5)).unwrap().is_none());
    }
}
