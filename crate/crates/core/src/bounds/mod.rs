//! Affine-multiplier bounds and their moment relaxations.
//!
//! Every program is assembled in a normalized frame: the polytope is reduced
//! to its affine hull, each coordinate is shifted and scaled to its range,
//! rows are normalized and the objective is divided by its largest
//! coefficient. Results are mapped back to the caller's coordinates.

mod certify;
mod classic;

pub use certify::{exact_representation, hgg_exactness_check, ExactnessCertificate, Representation};
pub use classic::{srlt_bound, stqp_conv_bound, BoxQp, SrltResult};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::conic::{ConicBackend, ConicProblem, ConicSolution, InteriorPoint, Sense, SolveStatus};
use crate::error::{QpError, Result};
use crate::geometry::{check_bounded_fulldim, ReducedPolytope};
use crate::linalg::{is_psd, min_eigenvalue, psd_clip, svec, svec_index};
use crate::model::{objective, AffineFunc, MultiplierCertificate, QpInstance, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BoundVariant {
    /// Full symmetric multiplier matrix.
    L,
    /// Multiplier gradients restricted to the negative eigenspace of `Q`.
    L1,
    /// Separable multipliers `d_k x_k + f` on the rows of a box.
    Box,
}

impl std::str::FromStr for BoundVariant {
    type Err = QpError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "L" => Ok(Self::L),
            "L1" => Ok(Self::L1),
            "BOX" => Ok(Self::Box),
            other => Err(QpError::InvalidInput(format!("unknown bound variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for BoundVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::L => "L",
            Self::L1 => "L1",
            Self::Box => "BOX",
        })
    }
}

/// Optimal level with multipliers `alpha_i(x) = y_i + sum_j Y_ij (b_j - A_j x)`.
#[derive(Debug, Clone)]
pub struct BoundResult {
    pub value: f64,
    pub y_mat: SymMatrix,
    pub y: DVector<f64>,
    pub variant: BoundVariant,
    pub status: SolveStatus,
    /// True when the polytope had implicit equalities; the certificate is then
    /// valid on the affine hull only.
    pub reduced: bool,
    pub iterations: usize,
}

impl BoundResult {
    /// The affine multipliers in the instance's coordinates.
    pub fn certificate(&self, inst: &QpInstance) -> MultiplierCertificate {
        let a = &inst.polytope.a;
        let b = &inst.polytope.b;
        let y = self.y_mat.to_dense();
        let alphas = (0..inst.m())
            .map(|i| {
                let row = y.row(i);
                let grad = -(a.transpose() * row.transpose());
                let offset = self.y[i] + row.dot(&b.transpose());
                AffineFunc::new(grad, offset)
            })
            .collect();
        MultiplierCertificate {
            alphas,
            level: self.value,
        }
    }
}

/// Moment solution `[[X, x], [x', 1]]` of the relaxation.
#[derive(Debug, Clone)]
pub struct RelaxationResult {
    pub value: f64,
    pub x_mat: SymMatrix,
    pub x: DVector<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
}

/// `U(x) = x'Hx + 2g'x + constant`.
#[derive(Debug, Clone)]
pub struct Underestimator {
    pub h: SymMatrix,
    pub g: DVector<f64>,
    pub constant: f64,
}

impl Underestimator {
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        objective(&self.h.to_dense(), &self.g, x) + self.constant
    }
}

// ---------------------------------------------------------------------------
// Normalized frame

/// `x = origin + E (mid + diag(half) w)`; objective `q(x) = sigma q_w(w) + q0`.
pub(crate) struct Frame {
    pub reduced: ReducedPolytope,
    pub mid: DVector<f64>,
    pub half: DVector<f64>,
    /// Original row index per frame row.
    pub rows: Vec<usize>,
    pub m_orig: usize,
    pub nu: Vec<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub sigma: f64,
    pub q0: f64,
    /// Objective matrix in hull coordinates `z` (before range scaling).
    pub qz: DMatrix<f64>,
}

impl Frame {
    pub fn new(inst: &QpInstance) -> Result<Self> {
        let rep = check_bounded_fulldim(&inst.polytope)?;
        if !rep.bounded {
            return Err(QpError::UnboundedPolytope);
        }
        let red = rep.reduced;
        let k = red.dim();
        let (lo, hi) = if !red.is_reduced() {
            rep.ranges.expect("bounded polytope has ranges")
        } else {
            inner_ranges(&red)?
        };
        let mid = (&lo + &hi) * 0.5;
        let half = (&hi - &lo).map(|v| if v > 1e-12 { 0.5 * v } else { 1.0 });
        let q = inst.q_dense();
        let (qz, cz, _) = red.reduce_objective(&q, &inst.c);
        let d = DMatrix::from_diagonal(&half);
        let qw = &d * &qz * &d;
        let cw = &d * (&qz * &mid + &cz);
        let q0 = objective(&q, &inst.c, &red.to_original(&mid));
        let sigma = qw
            .iter()
            .chain(cw.iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let sigma = if sigma > 0.0 { sigma } else { 1.0 };

        let mut rows = Vec::new();
        let mut nu = Vec::new();
        let mut arows: Vec<DVector<f64>> = Vec::new();
        let mut bvals = Vec::new();
        for (r, &orig) in red.rows.iter().enumerate() {
            let ar = red.inner.a.row(r).transpose();
            let aw = d.transpose() * &ar;
            let bw = red.inner.b[r] - ar.dot(&mid);
            let n = aw.norm();
            if n <= 1e-13 {
                continue;
            }
            rows.push(orig);
            nu.push(n);
            arows.push(aw / n);
            bvals.push(bw / n);
        }
        let a = if arows.is_empty() {
            DMatrix::zeros(0, k)
        } else {
            DMatrix::from_fn(arows.len(), k, |i, j| arows[i][j])
        };
        Ok(Self {
            reduced: red,
            mid,
            half,
            rows,
            m_orig: inst.m(),
            nu,
            a,
            b: DVector::from_vec(bvals),
            q: qw / sigma,
            c: cw / sigma,
            sigma,
            q0,
            qz,
        })
    }

    pub fn k(&self) -> usize {
        self.reduced.dim()
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    /// `(a_i, -b_i)` so that `r_i . (w; 1) = a_i w - b_i`.
    pub fn row_vec(&self, i: usize) -> DVector<f64> {
        let k = self.k();
        let mut r = DVector::zeros(k + 1);
        r.rows_mut(0, k).copy_from(&self.a.row(i).transpose());
        r[k] = -self.b[i];
        r
    }

    pub fn objective_gram(&self) -> DMatrix<f64> {
        let k = self.k();
        let mut g = DMatrix::zeros(k + 1, k + 1);
        g.view_mut((0, 0), (k, k)).copy_from(&self.q);
        for j in 0..k {
            g[(j, k)] = self.c[j];
            g[(k, j)] = self.c[j];
        }
        g
    }

    /// `T` with `(x; 1) = T (w; 1)`.
    pub fn lift(&self) -> DMatrix<f64> {
        let n = self.reduced.origin.len();
        let k = self.k();
        let ed = &self.reduced.embed * DMatrix::from_diagonal(&self.half);
        let shift = self.reduced.to_original(&self.mid);
        let mut t = DMatrix::zeros(n + 1, k + 1);
        t.view_mut((0, 0), (n, k)).copy_from(&ed);
        t.view_mut((0, k), (n, 1)).copy_from(&shift);
        t[(n, k)] = 1.0;
        t
    }

    pub fn value(&self, scaled: f64) -> f64 {
        self.sigma * scaled + self.q0
    }

    pub fn scaled_level(&self, level: f64) -> f64 {
        (level - self.q0) / self.sigma
    }
}

fn inner_ranges(red: &ReducedPolytope) -> Result<(DVector<f64>, DVector<f64>)> {
    let k = red.dim();
    let p = &red.inner;
    let mut lo = DVector::zeros(k);
    let mut hi = DVector::zeros(k);
    for j in 0..k {
        for sign in [1.0, -1.0] {
            let mut c = DVector::zeros(k);
            c[j] = sign;
            let sol = crate::conic::solve_lp(&c, &p.a, &p.b, None);
            if !sol.is_optimal() {
                return Err(match sol.status {
                    SolveStatus::Unbounded => QpError::UnboundedPolytope,
                    SolveStatus::Infeasible => QpError::EmptyPolytope,
                    s => QpError::Numerical(format!("range LP ended with {s:?}")),
                });
            }
            if sign > 0.0 {
                lo[j] = sol.objective_value;
            } else {
                hi[j] = -sol.objective_value;
            }
        }
    }
    Ok((lo, hi))
}

fn sym_outer(u: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let o = u * v.transpose();
    (&o + o.transpose()) * 0.5
}

fn unit(len: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(len);
    e[i] = 1.0;
    e
}

/// Columns for a PSD block `C0 + sum_v x_v C_v >= 0`.
struct PsdBlock {
    order: usize,
    h: DVector<f64>,
    cols: Vec<DVector<f64>>,
}

impl PsdBlock {
    fn new(c0: &DMatrix<f64>) -> Self {
        Self {
            order: c0.nrows(),
            h: svec(c0),
            cols: Vec::new(),
        }
    }

    fn push(&mut self, coeff: &DMatrix<f64>) {
        self.cols.push(-svec(coeff));
    }


    fn into_parts(self) -> (usize, DMatrix<f64>, DVector<f64>) {
        let g = DMatrix::from_columns(&self.cols);
        (self.order, g, self.h)
    }
}

/// Level corrected for any PSD violation of the Gram block at `x`: on the
/// frame box `|w| <= 1`, `(w; 1)' G (w; 1) >= (k + 1) min(0, lambda_min(G))`.
fn safe_level(gp: &DMatrix<f64>, hp: &DVector<f64>, order: usize, x: &DVector<f64>) -> f64 {
    let gram = crate::linalg::smat((hp - gp * x).as_slice(), order);
    x[0] + order as f64 * min_eigenvalue(&gram).min(0.0)
}

fn conic_failure(what: &str, sol: &ConicSolution) -> QpError {
    QpError::Numerical(format!(
        "{what} solve ended with {:?} after {} iterations",
        sol.status, sol.iterations
    ))
}

// ---------------------------------------------------------------------------
// Bound programs

pub fn solve_bound(inst: &QpInstance, variant: BoundVariant, cap: Option<f64>) -> Result<BoundResult> {
    solve_bound_with(&InteriorPoint::default(), inst, variant, cap)
}

pub fn solve_bound_with(
    backend: &dyn ConicBackend,
    inst: &QpInstance,
    variant: BoundVariant,
    cap: Option<f64>,
) -> Result<BoundResult> {
    let frame = Frame::new(inst)?;
    let m = inst.m();
    let reduced = frame.reduced.is_reduced();
    if frame.k() == 0 {
        let v = frame.q0;
        return Ok(BoundResult {
            value: cap.map_or(v, |u| v.min(u)),
            y_mat: SymMatrix::zeros(m),
            y: DVector::zeros(m),
            variant,
            status: SolveStatus::Optimal,
            reduced,
            iterations: 0,
        });
    }
    let (w_orig, y_orig, value, sol) = match variant {
        BoundVariant::L => bound_l(backend, &frame, cap, false)?,
        BoundVariant::L1 => bound_l(backend, &frame, cap, true)?,
        BoundVariant::Box => bound_box(backend, inst, &frame, cap)?,
    };
    let mut y_mat = SymMatrix::zeros(m);
    for i in 0..m {
        for j in i..m {
            y_mat.set(i, j, 0.5 * (w_orig[(i, j)] + w_orig[(j, i)]));
        }
    }
    Ok(BoundResult {
        value,
        y_mat,
        y: y_orig,
        variant,
        status: sol.status,
        reduced,
        iterations: sol.iterations,
    })
}

type BoundParts = (DMatrix<f64>, DVector<f64>, f64, ConicSolution);

/// (L0) in `(level, y, Y)`; with `restricted` the multiplier matrix is a full
/// nonnegative `W` whose gradients lie in the negative eigenspace of `Q`.
fn bound_l(
    backend: &dyn ConicBackend,
    f: &Frame,
    cap: Option<f64>,
    restricted: bool,
) -> Result<BoundParts> {
    let k = f.k();
    let m = f.m();
    let pairs: Vec<(usize, usize)> = if restricted {
        (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).collect()
    } else {
        (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect()
    };
    let nvar = 1 + m + pairs.len();
    let e = unit(k + 1, k);
    let r: Vec<DVector<f64>> = (0..m).map(|i| f.row_vec(i)).collect();

    let mut block = PsdBlock::new(&f.objective_gram());
    block.push(&(-(&e * e.transpose())));
    for ri in &r {
        block.push(&sym_outer(ri, &e));
    }
    for &(i, j) in &pairs {
        let kappa = if !restricted && i != j { 2.0 } else { 1.0 };
        block.push(&(sym_outer(&r[i], &r[j]) * -kappa));
    }

    let mut c = DVector::zeros(nvar);
    c[0] = 1.0;
    let mut p = ConicProblem::new(Sense::Maximize, c);
    let mut g = DMatrix::zeros(nvar - 1, nvar);
    for v in 1..nvar {
        g[(v - 1, v)] = -1.0;
    }
    p.push_nonneg(g, DVector::zeros(nvar - 1));
    if let Some(u) = cap {
        p.push_nonneg(DMatrix::from_fn(1, nvar, |_, j| if j == 0 { 1.0 } else { 0.0 }), DVector::from_element(1, f.scaled_level(u)));
    }
    let (order, gp, hp) = block.into_parts();
    p.push_psd(order, gp.clone(), hp.clone());

    if restricted {
        let perp = positive_eigenspace_complement(&f.qz);
        if perp.ncols() > 0 {
            // u = D^{-1} v maps hull gradients to frame gradients.
            let us: Vec<DVector<f64>> = (0..perp.ncols())
                .map(|t| perp.column(t).component_div(&f.half))
                .collect();
            let ua: Vec<Vec<f64>> = us
                .iter()
                .map(|u| (0..m).map(|j| u.dot(&f.a.row(j).transpose())).collect())
                .collect();
            let mut rows = Vec::new();
            for i in 0..m {
                for uaj in &ua {
                    let mut row = DVector::zeros(nvar);
                    for (pi, &(a, b)) in pairs.iter().enumerate() {
                        if a == i {
                            row[1 + m + pi] = uaj[b];
                        }
                    }
                    rows.push(row);
                }
            }
            let aeq = DMatrix::from_fn(rows.len(), nvar, |i, j| rows[i][j]);
            p.push_eq(aeq, DVector::zeros(rows.len()));
        }
    }

    let sol = backend.solve(&p);
    if !sol.is_optimal() {
        return Err(conic_failure("bound", &sol));
    }
    let mut xs = sol.x.clone();
    for v in xs.iter_mut().skip(1) {
        *v = v.max(0.0);
    }
    let value = f.value(safe_level(&gp, &hp, order, &xs));
    let m_orig = f.m_orig;
    let mut w = DMatrix::zeros(m_orig, m_orig);
    let mut y = DVector::zeros(m_orig);
    for i in 0..m {
        y[f.rows[i]] = f.sigma * xs[1 + i] / f.nu[i];
    }
    for (pi, &(i, j)) in pairs.iter().enumerate() {
        let val = f.sigma * xs[1 + m + pi] / (f.nu[i] * f.nu[j]);
        let (oi, oj) = (f.rows[i], f.rows[j]);
        if restricted {
            w[(oi, oj)] += val;
        } else {
            w[(oi, oj)] += val;
            if i != j {
                w[(oj, oi)] += val;
            }
        }
    }
    Ok((w, y, value, sol))
}

/// Orthonormal basis of the eigenvectors of `q` whose eigenvalues are not
/// below `-1e-8 ||q||_2`.
fn positive_eigenspace_complement(q: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(crate::linalg::symmetrize(q));
    let norm = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let tol = 1e-8 * norm;
    let cols: Vec<DVector<f64>> = (0..q.nrows())
        .filter(|&i| eig.eigenvalues[i] >= -tol)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(q.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

struct AxisRow {
    coord: usize,
    coef: f64,
}

fn axis_row(inst: &QpInstance, i: usize) -> Option<AxisRow> {
    let row = inst.polytope.a.row(i);
    let scale = row.amax();
    let nz: Vec<usize> = (0..row.len()).filter(|&j| row[j].abs() > 1e-14 * scale).collect();
    (nz.len() == 1).then(|| AxisRow {
        coord: nz[0],
        coef: row[nz[0]],
    })
}

/// Box ranges `(l, u)` plus the original rows attaining them.
fn box_structure(inst: &QpInstance, implicit: &[usize]) -> Result<Vec<(f64, usize, f64, usize)>> {
    let n = inst.n();
    let mut lower: Vec<Option<(f64, usize)>> = vec![None; n];
    let mut upper: Vec<Option<(f64, usize)>> = vec![None; n];
    for i in 0..inst.m() {
        match axis_row(inst, i) {
            Some(ax) => {
                let bound = inst.polytope.b[i] / ax.coef;
                if ax.coef > 0.0 {
                    if upper[ax.coord].is_none_or(|(u, _)| bound < u) {
                        upper[ax.coord] = Some((bound, i));
                    }
                } else if lower[ax.coord].is_none_or(|(l, _)| bound > l) {
                    lower[ax.coord] = Some((bound, i));
                }
            }
            None if implicit.contains(&i) => {}
            None => {
                return Err(QpError::InvalidInput(format!(
                    "BOX variant needs axis-aligned rows or equalities; row {i} is neither"
                )))
            }
        }
    }
    (0..n)
        .map(|k| match (lower[k], upper[k]) {
            (Some((l, il)), Some((u, iu))) => Ok((l, il, u, iu)),
            _ => Err(QpError::InvalidInput(format!(
                "BOX variant needs both bounds on coordinate {k}"
            ))),
        })
        .collect()
}

fn bound_box(
    backend: &dyn ConicBackend,
    inst: &QpInstance,
    f: &Frame,
    cap: Option<f64>,
) -> Result<BoundParts> {
    let k = f.k();
    let m = f.m();
    let boxes = box_structure(inst, &f.reduced.implicit_equalities)?;
    let lift = f.lift();
    let e = unit(k + 1, k);
    // tau_r . (w; 1) = xi_k(w), the coordinate of row r rescaled to [-1, 1].
    let mut taus = Vec::with_capacity(m);
    for i in 0..m {
        let ax = axis_row(inst, f.rows[i]).expect("kept rows are axis rows");
        let (l, _, u, _) = boxes[ax.coord];
        let (mk, hk) = (0.5 * (l + u), 0.5 * (u - l));
        let mut tau = lift.row(ax.coord).transpose() / hk;
        tau[k] -= mk / hk;
        taus.push((tau, ax.coord));
    }
    let nvar = 1 + 2 * m;
    let mut block = PsdBlock::new(&f.objective_gram());
    block.push(&(-(&e * e.transpose())));
    for i in 0..m {
        let r = f.row_vec(i);
        block.push(&sym_outer(&taus[i].0, &r));
        block.push(&sym_outer(&e, &r));
    }
    let mut c = DVector::zeros(nvar);
    c[0] = 1.0;
    let mut p = ConicProblem::new(Sense::Maximize, c);
    let mut g = DMatrix::zeros(2 * m, nvar);
    for i in 0..m {
        let (dv, fv) = (1 + 2 * i, 2 + 2 * i);
        // f - d >= 0 and f + d >= 0
        g[(2 * i, dv)] = 1.0;
        g[(2 * i, fv)] = -1.0;
        g[(2 * i + 1, dv)] = -1.0;
        g[(2 * i + 1, fv)] = -1.0;
    }
    p.push_nonneg(g, DVector::zeros(2 * m));
    if let Some(u) = cap {
        p.push_nonneg(DMatrix::from_fn(1, nvar, |_, j| if j == 0 { 1.0 } else { 0.0 }), DVector::from_element(1, f.scaled_level(u)));
    }
    let (order, gp, hp) = block.into_parts();
    p.push_psd(order, gp.clone(), hp.clone());
    let sol = backend.solve(&p);
    if !sol.is_optimal() {
        return Err(conic_failure("box bound", &sol));
    }
    let mut xs = sol.x.clone();
    for i in 0..m {
        xs[2 + 2 * i] = xs[2 + 2 * i].max(xs[1 + 2 * i].abs());
    }
    let value = f.value(safe_level(&gp, &hp, order, &xs));

    // alpha_r = A (1 + xi) + B (1 - xi) with A, B >= 0, written over the slacks
    // of the two rows that define the range of the coordinate.
    let mo = inst.m();
    let mut w = DMatrix::zeros(mo, mo);
    for i in 0..m {
        let scale = f.sigma / f.nu[i];
        let d = xs[1 + 2 * i] * scale;
        let fv = xs[2 + 2 * i] * scale;
        let (l, il, u, iu) = boxes[taus[i].1];
        let hk = 0.5 * (u - l);
        let a_coef = (0.5 * (fv + d)).max(0.0);
        let b_coef = (0.5 * (fv - d)).max(0.0);
        let sl = inst.polytope.a.row(il).amax();
        let su = inst.polytope.a.row(iu).amax();
        w[(f.rows[i], il)] += a_coef / (sl * hk);
        w[(f.rows[i], iu)] += b_coef / (su * hk);
    }
    Ok((w, DVector::zeros(mo), value, sol))
}

// ---------------------------------------------------------------------------
// Moment relaxation

pub fn solve_relaxation(inst: &QpInstance, include_ax_leq_b: bool) -> Result<RelaxationResult> {
    solve_relaxation_with(&InteriorPoint::default(), inst, include_ax_leq_b)
}

pub fn solve_relaxation_with(
    backend: &dyn ConicBackend,
    inst: &QpInstance,
    include_ax_leq_b: bool,
) -> Result<RelaxationResult> {
    let f = Frame::new(inst)?;
    let k = f.k();
    let m = f.m();
    if k == 0 {
        let x = f.reduced.origin.clone();
        let xm = &x * x.transpose();
        return Ok(RelaxationResult {
            value: f.q0,
            x_mat: SymMatrix::from_symmetric_part(&xm),
            x,
            status: SolveStatus::Optimal,
            iterations: 0,
        });
    }
    let s = k + 1;
    let nvar = crate::linalg::svec_len(s);
    let e = unit(s, k);
    // M_kk = 1 is substituted: its column moves into the constant terms.
    let kk = svec_index(s, k, k);
    let mut c = svec(&f.objective_gram());
    let constant = c[kk];
    c[kk] = 0.0;
    let mut p = ConicProblem::new(Sense::Minimize, c);
    let r: Vec<DVector<f64>> = (0..m).map(|i| f.row_vec(i)).collect();
    let mut rows: Vec<DVector<f64>> = Vec::new();
    for i in 0..m {
        for j in i..m {
            rows.push(-svec(&sym_outer(&r[i], &r[j])));
        }
    }
    if include_ax_leq_b {
        for ri in &r {
            rows.push(svec(&sym_outer(ri, &e)));
        }
    }
    let mut g = DMatrix::from_fn(rows.len(), nvar, |i, j| rows[i][j]);
    let h = -g.column(kk);
    g.set_column(kk, &DVector::zeros(rows.len()));
    p.push_nonneg(g, h);
    let mut gp = -DMatrix::identity(nvar, nvar);
    gp[(kk, kk)] = 0.0;
    let mut hp = DVector::zeros(nvar);
    hp[kk] = 1.0;
    p.push_psd(s, gp, hp);
    let sol = backend.solve(&p);
    if !sol.is_optimal() {
        return Err(conic_failure("relaxation", &sol));
    }
    let mut v = sol.x.clone();
    v[kk] = 1.0;
    let mw = crate::linalg::smat(v.as_slice(), s);
    let t = f.lift();
    let mx = &t * mw * t.transpose();
    let n = inst.n();
    let x = mx.view((0, n), (n, 1)).column(0).into_owned();
    let xm = mx.view((0, 0), (n, n)).into_owned();
    Ok(RelaxationResult {
        value: f.value(sol.objective_value + constant),
        x_mat: SymMatrix::from_symmetric_part(&xm),
        x,
        status: sol.status,
        iterations: sol.iterations,
    })
}

// ---------------------------------------------------------------------------
// Underestimator

/// `U(x) = q(x) + sum_i alpha_i(x)(A_i x - b_i)` for the multipliers of `br`.
pub fn extract_underestimator(inst: &QpInstance, br: &BoundResult) -> Result<Underestimator> {
    if br.status != SolveStatus::Optimal {
        return Err(QpError::InvalidInput("bound result is not optimal".into()));
    }
    let a = &inst.polytope.a;
    let b = &inst.polytope.b;
    let y = br.y_mat.to_dense();
    let h = inst.q_dense() - a.transpose() * &y * a;
    let h = crate::linalg::symmetrize(&h);
    let g = &inst.c + a.transpose() * (&y * b + &br.y * 0.5);
    let constant = -br.y.dot(b) - b.dot(&(&y * b));
    let h = if is_psd(&h) {
        if min_eigenvalue(&h) < 0.0 {
            psd_clip(&h)
        } else {
            h
        }
    } else {
        return Err(QpError::NotPsd(min_eigenvalue(&h)));
    };
    Ok(Underestimator {
        h: SymMatrix::from_symmetric_part(&h),
        g,
        constant,
    })
}
