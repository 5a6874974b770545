//! Convex quadratic programs `min x'Hx + 2g'x  s.t.  Ax <= b` with `H` PSD.
//!
//! Infeasible-start primal-dual method with Mehrotra correction on the
//! KKT conditions `2Hx + 2g + A'z = 0`, `Ax + s = b`, `s o z = 0`.

use nalgebra::{DMatrix, DVector};

use super::{solve_lp, ConicSolution, SolveStatus};
use crate::error::{QpError, Result};
use crate::linalg::{min_eigenvalue, psd_tolerance};

const MAX_ITER: usize = 200;
const TOL: f64 = 1e-9;

pub fn solve_convex_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<ConicSolution> {
    let n = g.len();
    let m = b.len();
    if h.nrows() != n || h.ncols() != n || a.ncols() != n || a.nrows() != m {
        return Err(QpError::Dimension(format!(
            "H {}x{}, g {}, A {}x{}, b {}",
            h.nrows(),
            h.ncols(),
            n,
            a.nrows(),
            a.ncols(),
            m
        )));
    }
    let h = crate::linalg::symmetrize(h);
    let lmin = min_eigenvalue(&h);
    if lmin < -psd_tolerance(&h) {
        return Err(QpError::NotPsd(lmin));
    }
    let feas = solve_lp(&DVector::zeros(n), a, b, None);
    if feas.status == SolveStatus::Infeasible {
        return Err(QpError::EmptyPolytope);
    }

    let h2 = &h * 2.0;
    let mut x = if feas.is_optimal() {
        feas.x.clone()
    } else {
        DVector::zeros(n)
    };
    let mut s = (b - a * &x).map(|v| v.max(1.0));
    let mut z = DVector::from_element(m, 1.0);
    let scale_b = 1.0 + b.norm();
    let scale_g = 1.0 + g.norm();
    let mut status = SolveStatus::IterationLimit;
    let mut iterations = 0;

    for it in 0..=MAX_ITER {
        iterations = it;
        let rd = &h2 * &x + g * 2.0 + a.transpose() * &z;
        let rp = a * &x + &s - b;
        let mu = if m > 0 { s.dot(&z) / m as f64 } else { 0.0 };
        let obj = x.dot(&(&h * &x)) + 2.0 * g.dot(&x);
        if !obj.is_finite() {
            status = SolveStatus::NumericalFailure;
            break;
        }
        if rp.norm() / scale_b <= TOL
            && rd.norm() / scale_g <= TOL
            && s.dot(&z) <= TOL * (1.0 + obj.abs())
        {
            status = SolveStatus::Optimal;
            break;
        }
        if it == MAX_ITER {
            break;
        }

        let d = s.zip_map(&z, |si, zi| zi / si);
        let mut mat = h2.clone();
        for i in 0..m {
            let row = a.row(i);
            mat += row.transpose() * row * d[i];
        }
        let reg = 1e-14 * (1.0 + crate::linalg::inf_norm(&mat));
        let chol = match mat.clone().cholesky() {
            Some(c) => c,
            None => {
                let mut r = mat.clone();
                for i in 0..n {
                    r[(i, i)] += reg.max(1e-12);
                }
                match r.cholesky() {
                    Some(c) => c,
                    None => {
                        status = SolveStatus::NumericalFailure;
                        break;
                    }
                }
            }
        };

        let direction = |rc: &DVector<f64>| {
            // ds = -rp - A dx;  dz = S^{-1}(-rc + Z rp) + D A dx
            let t = (-rc + z.component_mul(&rp)).component_div(&s);
            let rhs = -&rd - a.transpose() * &t;
            let dx = chol.solve(&rhs);
            let ds = -&rp - a * &dx;
            let dz = &t + d.component_mul(&(a * &dx));
            (dx, ds, dz)
        };
        let step = |v: &DVector<f64>, dv: &DVector<f64>| {
            let mut alpha = f64::INFINITY;
            for i in 0..v.len() {
                if dv[i] < 0.0 {
                    alpha = alpha.min(-v[i] / dv[i]);
                }
            }
            alpha
        };

        let rc_aff = s.component_mul(&z);
        let (_, ds_a, dz_a) = direction(&rc_aff);
        let alpha_a = step(&s, &ds_a).min(step(&z, &dz_a)).min(1.0);
        let mu_aff = if m > 0 {
            (&s + &ds_a * alpha_a).dot(&(&z + &dz_a * alpha_a)) / m as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).min(1.0) } else { 0.0 };
        let rc = &rc_aff + ds_a.component_mul(&dz_a) - DVector::from_element(m, sigma * mu);
        let (dx, ds, dz) = direction(&rc);
        let alpha = (0.99 * step(&s, &ds).min(step(&z, &dz))).min(1.0);
        if !alpha.is_finite() || alpha <= 1e-14 {
            status = SolveStatus::NumericalFailure;
            break;
        }
        x += &dx * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
    }

    let obj = x.dot(&(&h * &x)) + 2.0 * g.dot(&x);
    let rd = &h2 * &x + g * 2.0 + a.transpose() * &z;
    let rp = a * &x + &s - b;
    let dual = obj + z.dot(&(a * &x - b));
    Ok(ConicSolution {
        status,
        x,
        gap: s.dot(&z),
        s,
        z,
        y: DVector::zeros(0),
        objective_value: obj,
        dual_objective: dual,
        primal_residual: rp.norm() / scale_b,
        dual_residual: rd.norm() / scale_g,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_on_interval() {
        let h = DMatrix::from_element(1, 1, 1.0);
        let a = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![2.0, 1.0]);
        let sol = solve_convex_qp(&h, &DVector::zeros(1), &a, &b).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.objective_value.abs() < 1e-8);
        assert!(sol.x[0].abs() < 1e-5);
    }

    #[test]
    fn projection_onto_box() {
        // (x1-2)^2 + (x2-2)^2 = x'x - 4 e'x + 8
        let h = DMatrix::identity(2, 2);
        let g = DVector::from_vec(vec![-2.0, -2.0]);
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]);
        let sol = solve_convex_qp(&h, &g, &a, &b).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective_value + 8.0 - 2.0).abs() < 1e-8);
        assert!((sol.x[0] - 1.0).abs() < 1e-7 && (sol.x[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn rejects_indefinite() {
        let h = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(
            solve_convex_qp(&h, &DVector::zeros(2), &a, &b),
            Err(QpError::NotPsd(_))
        ));
    }

    #[test]
    fn rejects_empty() {
        let h = DMatrix::identity(1, 1);
        let a = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![0.0, -1.0]);
        assert_eq!(
            solve_convex_qp(&h, &DVector::zeros(1), &a, &b).unwrap_err(),
            QpError::EmptyPolytope
        );
    }
}
