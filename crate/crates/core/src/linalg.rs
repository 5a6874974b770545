//! Dense linear-algebra helpers shared by the solver and the bound assembly.
//!
//! Symmetric matrices are vectorized column-major over the lower triangle with
//! off-diagonal entries scaled by `sqrt(2)`, so that `svec(U) . svec(V) = tr(UV)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Length of the vectorization of an order-`s` symmetric matrix.
pub fn svec_len(s: usize) -> usize {
    s * (s + 1) / 2
}

/// Position of entry `(i, j)` in the vectorization of an order-`s` matrix.
pub fn svec_index(s: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i >= j { (i, j) } else { (j, i) };
    // Column j starts after sum_{k<j} (s - k) entries.
    j * s - j * j.saturating_sub(1) / 2 + (i - j)
}

/// Coefficient multiplying entry `(i, j)` inside the vectorization.
pub fn svec_scale(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        SQRT2
    }
}

pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let s = m.nrows();
    let mut v = DVector::zeros(svec_len(s));
    let mut k = 0;
    for j in 0..s {
        for i in j..s {
            let val = 0.5 * (m[(i, j)] + m[(j, i)]);
            v[k] = if i == j { val } else { SQRT2 * val };
            k += 1;
        }
    }
    v
}

pub fn smat(v: &[f64], s: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(s, s);
    let mut k = 0;
    for j in 0..s {
        for i in j..s {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let val = v[k] / SQRT2;
                m[(i, j)] = val;
                m[(j, i)] = val;
            }
            k += 1;
        }
    }
    m
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix (0 for an empty matrix).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    eig.eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Infinity norm (max absolute row sum).
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Spectral norm of a symmetric matrix.
pub fn sym_norm2(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// Scale-aware PSD test: `min eig >= -1e-7 (1 + ||M||_inf)`.
pub fn psd_tolerance(m: &DMatrix<f64>) -> f64 {
    1e-7 * (1.0 + inf_norm(m))
}

pub fn is_psd(m: &DMatrix<f64>) -> bool {
    min_eigenvalue(m) >= -psd_tolerance(m)
}

/// Clip negative eigenvalues to zero.
pub fn psd_clip(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0)));
    let u = &eig.eigenvectors;
    symmetrize(&(u * d * u.transpose()))
}

/// Numerical rank via singular values relative to the largest one.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&v| v > rel_tol * smax).count()
}

/// Orthonormal basis (as columns) of the null space of `m` (`n` columns in `m`).
pub fn null_space(m: &DMatrix<f64>, n: usize, rel_tol: f64) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // Pad to a square-ish matrix so the full right singular basis is available.
    let rows = m.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let mut cols = Vec::new();
    for k in 0..n {
        let sk = if k < sv.len() { sv[k] } else { 0.0 };
        if smax == 0.0 || sk <= rel_tol * smax {
            cols.push(vt.row(k).transpose());
        }
    }
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_preserves_inner_product() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 5.0, -1.0, 3.0, -1.0, 4.0]);
        let b = DMatrix::from_row_slice(3, 3, &[0.5, -1.0, 0.0, -1.0, 2.0, 1.5, 0.0, 1.5, -3.0]);
        let lhs = svec(&a).dot(&svec(&b));
        let rhs = (&a * &b).trace();
        assert!((lhs - rhs).abs() < 1e-12);
        assert_eq!(smat(svec(&a).as_slice(), 3), a);
    }

    #[test]
    fn svec_index_matches_layout() {
        let s = 4;
        let mut m = DMatrix::zeros(s, s);
        for j in 0..s {
            for i in j..s {
                m[(i, j)] = (10 * i + j) as f64;
                m[(j, i)] = (10 * i + j) as f64;
            }
        }
        let v = svec(&m);
        for j in 0..s {
            for i in j..s {
                let k = svec_index(s, i, j);
                assert!((v[k] / svec_scale(i, j) - (10 * i + j) as f64).abs() < 1e-12);
                assert_eq!(svec_index(s, j, i), k);
            }
        }
    }

    #[test]
    fn null_space_of_single_row() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let ns = null_space(&m, 3, 1e-10);
        assert_eq!(ns.ncols(), 2);
        assert!((&m * &ns).norm() < 1e-12);
        assert!((ns.transpose() * &ns - DMatrix::identity(2, 2)).norm() < 1e-12);
    }
}
