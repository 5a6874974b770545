//! Concavity cuts at nondegenerate vertices.
//!
//! At a vertex `v` with basis rows `B`, the local coordinate of row `k` is
//! `xi_k(x) = b_k - A_k x`, and the edge directions `d_i` satisfy
//! `A_k d_i = -delta_ki` on `B`, so `x = v + sum_i xi_i d_i`.

use nalgebra::{DMatrix, DVector};

use crate::conic::{solve_lp, ConicProblem, InteriorPoint, ConicBackend, Sense, SolveStatus};
use crate::error::{QpError, Result};
use crate::geometry::Vertex;
use crate::model::{objective, Polytope, QpInstance};

#[derive(Debug, Clone, PartialEq)]
pub struct LocalFrame {
    pub vertex: Vertex,
    pub basis_rows: Vec<usize>,
    pub directions: Vec<DVector<f64>>,
}

impl LocalFrame {
    pub fn n(&self) -> usize {
        self.directions.len()
    }

    /// `D` with the directions as columns.
    pub fn direction_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.directions)
    }

    pub fn local_coords(&self, p: &Polytope, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n(), |k, _| p.b[self.basis_rows[k]] - p.a.row(self.basis_rows[k]).dot(&x.transpose()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrameOutcome {
    Ready(LocalFrame),
    /// More than `n` rows are tight; no cut is attempted.
    Degenerate,
}

pub fn local_frame(p: &Polytope, v: &Vertex) -> Result<FrameOutcome> {
    let n = p.dim();
    if v.basis.len() != n {
        return Err(QpError::SingularBasis);
    }
    if v.active_set.len() > n {
        return Ok(FrameOutcome::Degenerate);
    }
    let ab = DMatrix::from_fn(n, n, |r, j| p.a[(v.basis[r], j)]);
    let inv = ab.try_inverse().ok_or(QpError::SingularBasis)?;
    let directions = (0..n).map(|i| -inv.column(i)).collect();
    Ok(FrameOutcome::Ready(LocalFrame {
        vertex: v.clone(),
        basis_rows: v.basis.clone(),
        directions,
    }))
}

/// First crossing `theta >= 0` of `a theta^2 + b theta + c0 = 0` with `c0 >= 0`,
/// or infinity when the quadratic stays nonnegative on the whole ray.
fn first_crossing(a: f64, b: f64, c0: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(c0.abs()).max(1e-300);
    if a.abs() <= 1e-14 * scale {
        return if b < 0.0 { c0 / -b } else { f64::INFINITY };
    }
    let disc = b * b - 4.0 * a * c0;
    if a < 0.0 {
        let sq = disc.max(0.0).sqrt();
        return if b >= 0.0 { (b + sq) / (-2.0 * a) } else { 2.0 * c0 / (sq - b) };
    }
    if b >= 0.0 || disc < 0.0 {
        return f64::INFINITY;
    }
    // Smaller positive root of a convex quadratic.
    let sq = disc.sqrt();
    2.0 * c0 / (sq - b)
}

/// `t_i = max{theta : q(v + theta' d_i) >= level for all theta' in [0, theta]}`.
pub fn tuy_extension(inst: &QpInstance, frame: &LocalFrame, level: f64) -> Result<Vec<f64>> {
    let q = inst.q_dense();
    let v = &frame.vertex.point;
    let fv = objective(&q, &inst.c, v);
    if fv < level - 1e-12 * (1.0 + level.abs()) {
        return Err(QpError::InvalidInput(format!(
            "vertex value {fv} is below the level {level}"
        )));
    }
    let g = &q * v + &inst.c;
    let c0 = (fv - level).max(0.0);
    Ok(frame
        .directions
        .iter()
        .map(|d| first_crossing(d.dot(&(&q * d)), 2.0 * g.dot(d), c0))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KonnoResult {
    pub eligible: bool,
    /// Extensions for the cut; equal to `t` wherever no improvement was accepted.
    pub s: Vec<f64>,
}

/// Tests eligibility of the frame vertex and, when eligible, enlarges the Tuy
/// extensions `t` to Konno's `s`.
pub fn konno_step(inst: &QpInstance, frame: &LocalFrame, t: &[f64], u: f64, eps: f64) -> Result<KonnoResult> {
    let n = frame.n();
    if t.len() != n {
        return Err(QpError::Dimension("extension vector has the wrong length".into()));
    }
    let level = u - eps;
    let tuy = KonnoResult {
        eligible: false,
        s: t.to_vec(),
    };
    if t.iter().any(|v| !v.is_finite()) {
        return Ok(tuy);
    }
    let p = &inst.polytope;
    let q = inst.q_dense();
    let c = &inst.c;
    let v = &frame.vertex.point;
    let cut = make_concavity_cut(p, frame, t)?;
    // Remaining part of the node beyond the Tuy cut.
    let beyond = p.with_row(&cut.a, cut.b);

    let mut min_q = f64::INFINITY;
    for (i, d) in frame.directions.iter().enumerate() {
        let z = v + d * t[i];
        let sol = solve_lp(&(&q * &z + c), &beyond.a, &beyond.b, None);
        match sol.status {
            SolveStatus::Optimal => min_q = min_q.min(objective(&q, c, &sol.x)),
            SolveStatus::Infeasible => {}
            _ => return Ok(tuy),
        }
    }
    if min_q < level {
        return Ok(tuy);
    }

    // Local data: x = v + D xi.
    let dm = frame.direction_matrix();
    let ql = dm.transpose() * &q * &dm;
    let cl = dm.transpose() * (&q * v + c);
    let fv = objective(&q, c, v);
    let al = &p.a * &dm;
    let bl = &p.b - &p.a * v;
    let m = p.nrows();

    // min over the part beyond the Tuy cut of cl'xi must keep F(0, xi) >= level.
    let tinv = DVector::from_iterator(n, t.iter().map(|v| 1.0 / v));
    let mut ab = DMatrix::zeros(m + 1, n);
    ab.view_mut((0, 0), (m, n)).copy_from(&al);
    ab.set_row(m, &(-tinv.transpose()));
    let mut bb = DVector::zeros(m + 1);
    bb.rows_mut(0, m).copy_from(&bl);
    bb[m] = -1.0;
    let base = solve_lp(&cl, &ab, &bb, None);
    match base.status {
        SolveStatus::Optimal if base.objective_value + fv >= level => {}
        SolveStatus::Infeasible => {}
        _ => {
            return Ok(KonnoResult {
                eligible: true,
                s: t.to_vec(),
            })
        }
    }

    let mut s = t.to_vec();
    for i in 0..n {
        if let Some(si) = konno_extension(&al, &bl, &ql, &cl, fv, &tinv, i, level) {
            if si >= t[i] {
                s[i] = si;
            }
        }
    }
    Ok(KonnoResult { eligible: true, s })
}

/// `max theta  s.t.  -A'lambda + mu t^-1 - theta Q_i = c,
///  -b'lambda + mu + theta c_i + f(v) >= level,  lambda, mu >= 0`.
#[allow(clippy::too_many_arguments)]
fn konno_extension(
    al: &DMatrix<f64>,
    bl: &DVector<f64>,
    ql: &DMatrix<f64>,
    cl: &DVector<f64>,
    fv: f64,
    tinv: &DVector<f64>,
    i: usize,
    level: f64,
) -> Option<f64> {
    let m = al.nrows();
    let n = al.ncols();
    // Variables: lambda (m), mu, theta.
    let nvar = m + 2;
    let mut c = DVector::zeros(nvar);
    c[m + 1] = 1.0;
    let mut p = ConicProblem::new(Sense::Maximize, c);
    let mut g = DMatrix::zeros(m + 2, nvar);
    let mut h = DVector::zeros(m + 2);
    for j in 0..=m {
        g[(j, j)] = -1.0;
    }
    for j in 0..m {
        g[(m + 1, j)] = bl[j];
    }
    g[(m + 1, m)] = -1.0;
    g[(m + 1, m + 1)] = -cl[i];
    h[m + 1] = fv - level;
    p.push_nonneg(g, h);
    let mut aeq = DMatrix::zeros(n, nvar);
    aeq.view_mut((0, 0), (n, m)).copy_from(&(-al.transpose()));
    aeq.set_column(m, tinv);
    aeq.set_column(m + 1, &(-ql.row(i).transpose()));
    p.push_eq(aeq, cl.clone());
    let sol = InteriorPoint::default().solve(&p);
    (sol.status == SolveStatus::Optimal && sol.x[m + 1].is_finite()).then(|| sol.x[m + 1])
}

/// `sum_k coeffs_k xi_k(x) >= 1` written as `a'x <= b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcavityCut {
    pub basis_rows: Vec<usize>,
    pub coeffs: Vec<f64>,
    pub a: DVector<f64>,
    pub b: f64,
}

impl ConcavityCut {
    /// `sum_k coeffs_k xi_k(x)`.
    pub fn lhs(&self, p: &Polytope, x: &DVector<f64>) -> f64 {
        self.basis_rows
            .iter()
            .zip(&self.coeffs)
            .map(|(&k, &w)| w * (p.b[k] - p.a.row(k).dot(&x.transpose())))
            .sum()
    }

    pub fn satisfied(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.a.dot(x) <= self.b + tol
    }
}

pub fn make_concavity_cut(p: &Polytope, frame: &LocalFrame, ext: &[f64]) -> Result<ConcavityCut> {
    let n = frame.n();
    if ext.len() != n {
        return Err(QpError::Dimension("extension vector has the wrong length".into()));
    }
    if let Some(bad) = ext.iter().find(|&&e| e.is_nan() || e <= 0.0) {
        return Err(QpError::InvalidInput(format!("extension {bad} is not positive")));
    }
    if ext.iter().all(|e| e.is_infinite()) {
        return Err(QpError::VacuousCut);
    }
    let coeffs: Vec<f64> = ext.iter().map(|&e| if e.is_finite() { 1.0 / e } else { 0.0 }).collect();
    let mut a = DVector::zeros(p.dim());
    let mut b = -1.0;
    for (k, &row) in frame.basis_rows.iter().enumerate() {
        a += p.a.row(row).transpose() * coeffs[k];
        b += p.b[row] * coeffs[k];
    }
    Ok(ConcavityCut {
        basis_rows: frame.basis_rows.clone(),
        coeffs,
        a,
        b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::vertex_at;
    use crate::model::SymMatrix;

    fn neg_norm(p: Polytope) -> QpInstance {
        QpInstance::new("t", SymMatrix::from_dense(&-DMatrix::identity(2, 2), 0.0).unwrap(), DVector::zeros(2), p).unwrap()
    }

    fn frame_at(p: &Polytope, x: &[f64]) -> LocalFrame {
        let v = vertex_at(p, &DVector::from_row_slice(x)).unwrap();
        match local_frame(p, &v).unwrap() {
            FrameOutcome::Ready(f) => f,
            FrameOutcome::Degenerate => panic!("degenerate"),
        }
    }

    #[test]
    fn box_frames() {
        let p = Polytope::unit_box(2);
        let f = frame_at(&p, &[0.0, 0.0]);
        let mut dirs: Vec<Vec<f64>> = f.directions.iter().map(|d| d.iter().copied().collect()).collect();
        dirs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_eq!(dirs, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let f = frame_at(&p, &[1.0, 1.0]);
        for d in &f.directions {
            assert!(d.iter().all(|&v| v <= 0.0) && (d.sum() + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tuy_on_box_corner() {
        let p = Polytope::unit_box(2);
        let inst = neg_norm(p.clone());
        let f = frame_at(&p, &[0.0, 0.0]);
        let t = tuy_extension(&inst, &f, -2.1).unwrap();
        for v in &t {
            assert!((v - 2.1f64.sqrt()).abs() < 1e-12);
        }
        let cut = make_concavity_cut(&p, &f, &t).unwrap();
        // (x1 + x2) / sqrt(2.1) >= 1
        assert!((cut.b + 1.0).abs() < 1e-12);
        assert!(cut.a.iter().all(|&v| (v + 1.0 / 2.1f64.sqrt()).abs() < 1e-12));
        assert!(tuy_extension(&inst, &f, 1.0).is_err());
    }

    #[test]
    fn infinite_extension_drops_edge() {
        let p = Polytope::unit_box(2);
        let f = frame_at(&p, &[0.0, 0.0]);
        let ext: Vec<f64> = f
            .directions
            .iter()
            .map(|d| if d[0] > 0.5 { f64::INFINITY } else { 2.0 })
            .collect();
        let cut = make_concavity_cut(&p, &f, &ext).unwrap();
        // x2 >= 2
        assert!(cut.a[0].abs() < 1e-12 && (cut.a[1] + 0.5).abs() < 1e-12 && (cut.b + 1.0).abs() < 1e-12);
        assert_eq!(make_concavity_cut(&p, &f, &[f64::INFINITY; 2]).unwrap_err(), QpError::VacuousCut);
    }

    #[test]
    fn konno_dominates_tuy() {
        let p = Polytope::unit_box(2);
        let inst = neg_norm(p.clone());
        let f = frame_at(&p, &[0.0, 0.0]);
        let (u, eps) = (-2.0, 0.1);
        let t = tuy_extension(&inst, &f, u - eps).unwrap();
        let k = konno_step(&inst, &f, &t, u, eps).unwrap();
        assert!(k.eligible);
        for (s, t) in k.s.iter().zip(&t) {
            assert!(s >= t);
        }
    }

    #[test]
    fn linear_ray_never_descends() {
        assert!(first_crossing(0.0, 1.0, 0.5).is_infinite());
        assert!((first_crossing(0.0, -2.0, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(first_crossing(-1.0, -1.0, 0.0), 0.0);
    }
}
