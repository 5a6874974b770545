//! Homogeneous self-dual interior-point method with Nesterov-Todd scaling.
//!
//! The embedding is solved for `(x, y, z, s, tau, kappa)`; `tau > 0` at the limit
//! yields an optimal pair, `kappa > 0` a certificate of infeasibility. Scaling is
//! recomputed from `(s, z)` at every iteration; each iteration takes a Mehrotra
//! predictor-corrector step.

use nalgebra::{DMatrix, DVector};

use super::{Cone, ConicBackend, ConicProblem, ConicSolution, Sense, SolveStatus};
use crate::linalg::{smat, svec, svec_len};

#[derive(Debug, Clone)]
pub struct IpmOptions {
    pub max_iter: usize,
    /// Relative primal/dual residual tolerance.
    pub feastol: f64,
    /// Gap tolerance, applied as `gaptol * (1 + |objective|)`.
    pub gaptol: f64,
    /// Fraction of the distance to the boundary taken per step.
    pub step: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            feastol: 1e-9,
            gaptol: 1e-9,
            step: 0.99,
        }
    }
}

/// The shipped dense backend.
#[derive(Debug, Clone, Default)]
pub struct InteriorPoint {
    pub options: IpmOptions,
}

impl InteriorPoint {
    pub fn with_options(options: IpmOptions) -> Self {
        Self { options }
    }
}

impl ConicBackend for InteriorPoint {
    fn solve(&self, problem: &ConicProblem) -> ConicSolution {
        solve_embedding(problem, &self.options)
    }
}

// ---------------------------------------------------------------------------
// Cone arithmetic

#[derive(Debug, Clone)]
enum BlockScaling {
    Nonneg {
        w: Vec<f64>,
        lambda: Vec<f64>,
    },
    Psd {
        s: usize,
        r: DMatrix<f64>,
        rinv: DMatrix<f64>,
        lambda: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Scaling {
    blocks: Vec<BlockScaling>,
    offsets: Vec<usize>,
}

fn offsets(cones: &[Cone]) -> Vec<usize> {
    let mut off = Vec::with_capacity(cones.len());
    let mut acc = 0;
    for c in cones {
        off.push(acc);
        acc += c.dim();
    }
    off
}

impl Scaling {
    fn identity(cones: &[Cone]) -> Self {
        let blocks = cones
            .iter()
            .map(|c| match *c {
                Cone::Nonneg(k) => BlockScaling::Nonneg {
                    w: vec![1.0; k],
                    lambda: vec![1.0; k],
                },
                Cone::Psd(s) => BlockScaling::Psd {
                    s,
                    r: DMatrix::identity(s, s),
                    rinv: DMatrix::identity(s, s),
                    lambda: vec![1.0; s],
                },
            })
            .collect();
        Self {
            blocks,
            offsets: offsets(cones),
        }
    }

    /// Nesterov-Todd scaling of the interior pair `(s, z)`.
    fn compute(cones: &[Cone], s: &DVector<f64>, z: &DVector<f64>) -> Option<Self> {
        let off = offsets(cones);
        let mut blocks = Vec::with_capacity(cones.len());
        for (k, c) in cones.iter().enumerate() {
            let o = off[k];
            match *c {
                Cone::Nonneg(d) => {
                    let mut w = Vec::with_capacity(d);
                    let mut lambda = Vec::with_capacity(d);
                    for i in 0..d {
                        let (si, zi) = (s[o + i], z[o + i]);
                        if !(si > 0.0 && zi > 0.0) {
                            return None;
                        }
                        w.push((si / zi).sqrt());
                        lambda.push((si * zi).sqrt());
                    }
                    blocks.push(BlockScaling::Nonneg { w, lambda });
                }
                Cone::Psd(sz) => {
                    let len = svec_len(sz);
                    let smatrix = smat(&s.as_slice()[o..o + len], sz);
                    let zmatrix = smat(&z.as_slice()[o..o + len], sz);
                    let ls = smatrix.cholesky()?.l();
                    let lz = zmatrix.cholesky()?.l();
                    let m = lz.transpose() * &ls;
                    let svd = m.svd(true, true);
                    let u = svd.u?;
                    let vt = svd.v_t?;
                    let sv = svd.singular_values;
                    if sv.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                        return None;
                    }
                    let inv_sqrt = DMatrix::from_diagonal(&sv.map(|v| 1.0 / v.sqrt()));
                    // r = Ls V diag(l)^(-1/2),  r^(-1) = diag(l)^(-1/2) U' Lz'
                    let r = &ls * vt.transpose() * &inv_sqrt;
                    let rinv = &inv_sqrt * u.transpose() * lz.transpose();
                    blocks.push(BlockScaling::Psd {
                        s: sz,
                        r,
                        rinv,
                        lambda: sv.iter().cloned().collect(),
                    });
                }
            }
        }
        Some(Self {
            blocks,
            offsets: off,
        })
    }

    fn map(&self, v: &DVector<f64>, op: ScaleOp) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (k, b) in self.blocks.iter().enumerate() {
            let o = self.offsets[k];
            match b {
                BlockScaling::Nonneg { w, .. } => {
                    for i in 0..w.len() {
                        out[o + i] = match op {
                            ScaleOp::W | ScaleOp::WT => w[i] * v[o + i],
                            ScaleOp::WInvT | ScaleOp::WInv => v[o + i] / w[i],
                        };
                    }
                }
                BlockScaling::Psd { s, r, rinv, .. } => {
                    let len = svec_len(*s);
                    let u = smat(&v.as_slice()[o..o + len], *s);
                    let mapped = match op {
                        ScaleOp::W => r.transpose() * u * r,
                        ScaleOp::WT => r * u * r.transpose(),
                        ScaleOp::WInvT => rinv * u * rinv.transpose(),
                        ScaleOp::WInv => rinv.transpose() * u * rinv,
                    };
                    out.rows_mut(o, len).copy_from(&svec(&mapped));
                }
            }
        }
        out
    }

    /// Apply `W^{-T}` to every column of `g`.
    fn map_columns_inv_t(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(g.nrows(), g.ncols());
        for j in 0..g.ncols() {
            let col = g.column(j).into_owned();
            out.set_column(j, &self.map(&col, ScaleOp::WInvT));
        }
        out
    }

    fn lambda(&self, dim: usize) -> DVector<f64> {
        let mut out = DVector::zeros(dim);
        for (k, b) in self.blocks.iter().enumerate() {
            let o = self.offsets[k];
            match b {
                BlockScaling::Nonneg { lambda, .. } => {
                    for (i, l) in lambda.iter().enumerate() {
                        out[o + i] = *l;
                    }
                }
                BlockScaling::Psd { s, lambda, .. } => {
                    for (i, l) in lambda.iter().enumerate() {
                        out[o + crate::linalg::svec_index(*s, i, i)] = *l;
                    }
                }
            }
        }
        out
    }

    /// Solve `lambda o x = v` (Jordan product) for diagonal scaled `lambda`.
    fn lambda_div(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (k, b) in self.blocks.iter().enumerate() {
            let o = self.offsets[k];
            match b {
                BlockScaling::Nonneg { lambda, .. } => {
                    for (i, l) in lambda.iter().enumerate() {
                        out[o + i] = v[o + i] / l;
                    }
                }
                BlockScaling::Psd { s, lambda, .. } => {
                    let mut idx = o;
                    for j in 0..*s {
                        for i in j..*s {
                            out[idx] = 2.0 * v[idx] / (lambda[i] + lambda[j]);
                            idx += 1;
                        }
                    }
                }
            }
        }
        out
    }

    /// Largest `alpha` (possibly infinite) with `lambda + alpha d` in the cone.
    fn max_step(&self, d: &DVector<f64>) -> f64 {
        let mut alpha = f64::INFINITY;
        for (k, b) in self.blocks.iter().enumerate() {
            let o = self.offsets[k];
            match b {
                BlockScaling::Nonneg { lambda, .. } => {
                    for (i, l) in lambda.iter().enumerate() {
                        let ratio = d[o + i] / l;
                        if ratio < 0.0 {
                            alpha = alpha.min(-1.0 / ratio);
                        }
                    }
                }
                BlockScaling::Psd { s, lambda, .. } => {
                    let len = svec_len(*s);
                    let mut scaled = d.rows(o, len).into_owned();
                    let mut idx = 0;
                    for j in 0..*s {
                        for i in j..*s {
                            scaled[idx] /= (lambda[i] * lambda[j]).sqrt();
                            idx += 1;
                        }
                    }
                    let rho = crate::linalg::min_eigenvalue(&smat(scaled.as_slice(), *s));
                    if rho < 0.0 {
                        alpha = alpha.min(-1.0 / rho);
                    }
                }
            }
        }
        alpha
    }
}

#[derive(Debug, Clone, Copy)]
enum ScaleOp {
    W,
    WT,
    WInvT,
    WInv,
}

fn identity_element(cones: &[Cone]) -> DVector<f64> {
    let dim: usize = cones.iter().map(Cone::dim).sum();
    let mut e = DVector::zeros(dim);
    let off = offsets(cones);
    for (k, c) in cones.iter().enumerate() {
        match *c {
            Cone::Nonneg(d) => {
                for i in 0..d {
                    e[off[k] + i] = 1.0;
                }
            }
            Cone::Psd(s) => {
                for i in 0..s {
                    e[off[k] + crate::linalg::svec_index(s, i, i)] = 1.0;
                }
            }
        }
    }
    e
}

/// Jordan product `u o v`.
fn jordan_product(cones: &[Cone], u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(u.len());
    let off = offsets(cones);
    for (k, c) in cones.iter().enumerate() {
        let o = off[k];
        match *c {
            Cone::Nonneg(d) => {
                for i in 0..d {
                    out[o + i] = u[o + i] * v[o + i];
                }
            }
            Cone::Psd(s) => {
                let len = svec_len(s);
                let um = smat(&u.as_slice()[o..o + len], s);
                let vm = smat(&v.as_slice()[o..o + len], s);
                let p = (&um * &vm + &vm * &um) * 0.5;
                out.rows_mut(o, len).copy_from(&svec(&p));
            }
        }
    }
    out
}

/// `max_blocks(-lambda_min(v))`: how far `v` is outside the cone.
fn cone_violation(cones: &[Cone], v: &DVector<f64>) -> f64 {
    let off = offsets(cones);
    let mut t = f64::NEG_INFINITY;
    for (k, c) in cones.iter().enumerate() {
        let o = off[k];
        match *c {
            Cone::Nonneg(d) => {
                for i in 0..d {
                    t = t.max(-v[o + i]);
                }
            }
            Cone::Psd(s) => {
                let len = svec_len(s);
                let m = smat(&v.as_slice()[o..o + len], s);
                t = t.max(-crate::linalg::min_eigenvalue(&m));
            }
        }
    }
    t
}

fn shift_into_cone(cones: &[Cone], v: &mut DVector<f64>) {
    let t = cone_violation(cones, v);
    if !t.is_finite() {
        return;
    }
    if t >= -1e-8 * v.norm().max(1.0) {
        let e = identity_element(cones);
        *v += e * (1.0 + t);
    }
}

// ---------------------------------------------------------------------------
// KKT system

enum Factor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

struct Kkt<'a> {
    g: &'a DMatrix<f64>,
    a: &'a DMatrix<f64>,
    scaling: &'a Scaling,
    gt: DMatrix<f64>,
    factor: Factor,
}

impl<'a> Kkt<'a> {
    fn new(g: &'a DMatrix<f64>, a: &'a DMatrix<f64>, scaling: &'a Scaling) -> Option<Self> {
        let n = g.ncols();
        let p = a.nrows();
        let gt = scaling.map_columns_inv_t(g);
        let mut hm = gt.transpose() * &gt;
        // Columns of [G; A] may be dependent (variables absent from every row);
        // a tiny diagonal shift keeps the reduced system solvable and the
        // refinement step below restores accuracy on the true system.
        let mut factor = None;
        for attempt in 0..3 {
            if attempt > 0 {
                let scale = (0..n).map(|i| hm[(i, i)].abs()).fold(1.0, f64::max);
                let delta = scale * if attempt == 1 { 1e-13 } else { 1e-9 };
                for i in 0..n {
                    hm[(i, i)] += delta;
                }
            }
            factor = if p == 0 {
                hm.clone().cholesky().map(Factor::Chol)
            } else {
                let mut k = DMatrix::zeros(n + p, n + p);
                k.view_mut((0, 0), (n, n)).copy_from(&hm);
                k.view_mut((0, n), (n, p)).copy_from(&a.transpose());
                k.view_mut((n, 0), (p, n)).copy_from(a);
                let lu = k.lu();
                if lu.is_invertible() {
                    Some(Factor::Lu(lu))
                } else {
                    None
                }
            };
            if factor.is_some() {
                break;
            }
        }
        let factor = factor?;
        Some(Self {
            g,
            a,
            scaling,
            gt,
            factor,
        })
    }

    fn solve_once(
        &self,
        bx: &DVector<f64>,
        by: &DVector<f64>,
        bz: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let n = self.g.ncols();
        let p = self.a.nrows();
        let wbz = self.scaling.map(bz, ScaleOp::WInvT);
        let rhs_x = bx + self.gt.transpose() * &wbz;
        let (ux, uy) = match &self.factor {
            Factor::Chol(ch) => (ch.solve(&rhs_x), DVector::zeros(0)),
            Factor::Lu(lu) => {
                if p == 0 {
                    (lu.solve(&rhs_x)?, DVector::zeros(0))
                } else {
                    let mut rhs = DVector::zeros(n + p);
                    rhs.rows_mut(0, n).copy_from(&rhs_x);
                    rhs.rows_mut(n, p).copy_from(by);
                    let sol = lu.solve(&rhs)?;
                    (sol.rows(0, n).into_owned(), sol.rows(n, p).into_owned())
                }
            }
        };
        let uz = self
            .scaling
            .map(&(&self.gt * &ux - wbz), ScaleOp::WInv);
        Some((ux, uy, uz))
    }

    /// Solve with one round of iterative refinement on the full system
    /// `[0 A' G'; A 0 0; G 0 -W'W] u = b`.
    fn solve(
        &self,
        bx: &DVector<f64>,
        by: &DVector<f64>,
        bz: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let (mut ux, mut uy, mut uz) = self.solve_once(bx, by, bz)?;
        for _ in 0..2 {
            let wwz = self
                .scaling
                .map(&self.scaling.map(&uz, ScaleOp::W), ScaleOp::WT);
            let mut rx = bx - self.g.transpose() * &uz;
            if self.a.nrows() > 0 {
                rx -= self.a.transpose() * &uy;
            }
            let ry = by - self.a * &ux;
            let rz = bz - (self.g * &ux - wwz);
            let (cx, cy, cz) = self.solve_once(&rx, &ry, &rz)?;
            ux += cx;
            uy += cy;
            uz += cz;
        }
        Some((ux, uy, uz))
    }
}

// ---------------------------------------------------------------------------
// Equality preprocessing

struct ReducedEq {
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// Maps a multiplier of the reduced rows back to the original rows.
    back: DMatrix<f64>,
}

fn reduce_equalities(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<ReducedEq, ()> {
    let p = a.nrows();
    let n = a.ncols();
    if p == 0 {
        return Ok(ReducedEq {
            a: a.clone(),
            b: b.clone(),
            back: DMatrix::zeros(0, 0),
        });
    }
    // Rank-revealing via the SVD of A (p x n): A = U S V'.
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..sv.len())
        .filter(|&k| smax > 0.0 && sv[k] > 1e-10 * smax)
        .collect();
    let ur = DMatrix::from_columns(&keep.iter().map(|&k| u.column(k).into_owned()).collect::<Vec<_>>());
    let (ar, br) = if keep.is_empty() {
        (DMatrix::zeros(0, n), DVector::zeros(0))
    } else {
        (ur.transpose() * a, ur.transpose() * b)
    };
    let proj = if keep.is_empty() {
        DVector::zeros(p)
    } else {
        &ur * &br
    };
    if (b - proj).norm() > 1e-9 * (1.0 + b.norm()) {
        return Err(());
    }
    let back = if keep.is_empty() { DMatrix::zeros(p, 0) } else { ur };
    Ok(ReducedEq {
        a: ar,
        b: br,
        back,
    })
}

// ---------------------------------------------------------------------------
// Main loop

fn failure(problem: &ConicProblem, status: SolveStatus, iterations: usize) -> ConicSolution {
    let n = problem.num_vars();
    let m = problem.cone_dim();
    let p = problem.a.nrows();
    ConicSolution {
        status,
        x: DVector::from_element(n, f64::NAN),
        s: DVector::from_element(m, f64::NAN),
        z: DVector::from_element(m, f64::NAN),
        y: DVector::from_element(p, f64::NAN),
        objective_value: f64::NAN,
        dual_objective: f64::NAN,
        gap: f64::NAN,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        iterations,
    }
}

/// Stalled runs whose best iterate is within this factor of every tolerance
/// are reported as optimal.
const NEAR_OPTIMAL: f64 = 100.0;

fn solve_embedding(problem: &ConicProblem, opts: &IpmOptions) -> ConicSolution {
    if problem.validate().is_err() {
        return failure(problem, SolveStatus::NumericalFailure, 0);
    }
    let eq = match reduce_equalities(&problem.a, &problem.b) {
        Ok(eq) => eq,
        Err(()) => return failure(problem, SolveStatus::Infeasible, 0),
    };
    let cones = &problem.cones;
    let g = &problem.g;
    let h = &problem.h;
    let a = &eq.a;
    let b = &eq.b;
    let c = match problem.sense {
        Sense::Minimize => problem.c.clone(),
        Sense::Maximize => -problem.c.clone(),
    };
    let n = c.len();
    let p = a.nrows();
    let cdim = h.len();
    let degree: usize = cones.iter().map(Cone::degree).sum();

    if cdim == 0 {
        return failure(problem, SolveStatus::NumericalFailure, 0);
    }

    let resx0 = c.norm().max(1.0);
    let resy0 = b.norm().max(1.0);
    let resz0 = h.norm().max(1.0);

    // Starting point.
    let ident = Scaling::identity(cones);
    let kkt0 = match Kkt::new(g, a, &ident) {
        Some(k) => k,
        None => return failure(problem, SolveStatus::NumericalFailure, 0),
    };
    let Some((mut x, _, zp)) = kkt0.solve(&DVector::zeros(n), b, h) else {
        return failure(problem, SolveStatus::NumericalFailure, 0);
    };
    let mut s = -zp;
    let Some((_, mut y, mut z)) = kkt0.solve(&(-&c), &DVector::zeros(p), &DVector::zeros(cdim))
    else {
        return failure(problem, SolveStatus::NumericalFailure, 0);
    };
    shift_into_cone(cones, &mut s);
    shift_into_cone(cones, &mut z);
    let mut tau = 1.0_f64;
    let mut kappa = 1.0_f64;

    let e = identity_element(cones);
    let mut status = SolveStatus::IterationLimit;
    let mut iterations = 0;
    let mut small_steps = 0;
    // Best iterate seen, used when progress stalls just short of the tolerances.
    let mut best: Option<(f64, DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>, f64)> = None;

    for it in 0..=opts.max_iter {
        iterations = it;
        let at_y = if p > 0 { a.transpose() * &y } else { DVector::zeros(n) };
        let hrx = -(&at_y + g.transpose() * &z);
        let hresx = hrx.norm();
        let rx = -(&hrx) + &c * tau; // A'y + G'z + c tau
        let hry = if p > 0 { a * &x } else { DVector::zeros(0) };
        let ry = &hry - b * tau;
        let hrz = &s + g * &x;
        let rz = &hrz - h * tau;
        let cx = c.dot(&x);
        let by = if p > 0 { b.dot(&y) } else { 0.0 };
        let hz = h.dot(&z);
        let rt = kappa + cx + by + hz;
        let sz = s.dot(&z);

        let pcost = cx / tau;
        let dcost = -(by + hz) / tau;
        let gap = sz / (tau * tau);
        let pres = (ry.norm() / tau / resy0).max(rz.norm() / tau / resz0);
        let dres = rx.norm() / tau / resx0;
        let gap_ok = gap <= opts.gaptol * (1.0 + pcost.abs())
            && (pcost - dcost).abs() <= opts.gaptol * (1.0 + pcost.abs());

        if !(pcost.is_finite() && dcost.is_finite() && gap.is_finite()) {
            status = SolveStatus::NumericalFailure;
            break;
        }
        if pres <= opts.feastol && dres <= opts.feastol && gap_ok {
            status = SolveStatus::Optimal;
            break;
        }
        let gaprel = gap.max((pcost - dcost).abs()) / (1.0 + pcost.abs());
        let score = (pres / opts.feastol).max(dres / opts.feastol).max(gaprel / opts.gaptol);
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, x.clone(), y.clone(), z.clone(), s.clone(), tau));
        }
        if by + hz < 0.0 && tau < kappa {
            let pinfres = hresx / resx0 / (-(by + hz));
            if pinfres <= opts.feastol {
                status = SolveStatus::Infeasible;
                break;
            }
        }
        if cx < 0.0 && tau < kappa {
            let hresy = hry.norm();
            let hresz = hrz.norm();
            let dinfres = (hresy / resy0).max(hresz / resz0) / (-cx);
            if dinfres <= opts.feastol {
                status = SolveStatus::Unbounded;
                break;
            }
        }
        if it == opts.max_iter {
            status = SolveStatus::IterationLimit;
            break;
        }

        let mu = (sz + tau * kappa) / (degree as f64 + 1.0);
        let Some(scaling) = Scaling::compute(cones, &s, &z) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let lambda = scaling.lambda(cdim);
        let Some(kkt) = Kkt::new(g, a, &scaling) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let Some((x1, y1, z1)) = kkt.solve(&(-&c), b, h) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let denom_base = c.dot(&x1) + if p > 0 { b.dot(&y1) } else { 0.0 } + h.dot(&z1);
        let lambda_sq = jordan_product(cones, &lambda, &lambda);

        let mut affine: Option<(DVector<f64>, DVector<f64>, f64, f64)> = None;
        let mut sigma = 0.0;
        let mut step_taken = None;

        for phase in 0..2 {
            let (eta, ds_rhs, dk_rhs) = if phase == 0 {
                (1.0, -&lambda_sq, -tau * kappa)
            } else {
                let (dsa, dza, dta, dka) = affine.as_ref().expect("affine step computed");
                let corr = jordan_product(cones, dsa, dza);
                (
                    1.0 - sigma,
                    -&lambda_sq - corr + &e * (sigma * mu),
                    -tau * kappa - dta * dka + sigma * mu,
                )
            };
            let v = scaling.lambda_div(&ds_rhs);
            let wtv = scaling.map(&v, ScaleOp::WT);
            let Some((x0, y0, z0)) = kkt.solve(&(-eta * &rx), &(-eta * &ry), &(-eta * &rz - wtv))
            else {
                break;
            };
            let num = -eta * rt
                - dk_rhs / tau
                - (c.dot(&x0) + if p > 0 { b.dot(&y0) } else { 0.0 } + h.dot(&z0));
            let dtau = num / (denom_base - kappa / tau);
            let dx = &x0 + &x1 * dtau;
            let dy = &y0 + &y1 * dtau;
            let dz = &z0 + &z1 * dtau;
            let dz_scaled = scaling.map(&dz, ScaleOp::W);
            let ds_scaled = &v - &dz_scaled;
            let dkappa = (dk_rhs - kappa * dtau) / tau;

            let mut amax = scaling.max_step(&ds_scaled).min(scaling.max_step(&dz_scaled));
            if dtau < 0.0 {
                amax = amax.min(-tau / dtau);
            }
            if dkappa < 0.0 {
                amax = amax.min(-kappa / dkappa);
            }
            if phase == 0 {
                let alpha = amax.min(1.0);
                sigma = (1.0 - alpha).clamp(0.0, 1.0).powi(3);
                affine = Some((ds_scaled, dz_scaled, dtau, dkappa));
            } else {
                let alpha = (opts.step * amax).min(1.0);
                let ds = scaling.map(&ds_scaled, ScaleOp::WT);
                step_taken = Some((alpha, dx, dy, dz, ds, dtau, dkappa));
            }
        }

        let Some((alpha, dx, dy, dz, ds, dtau, dkappa)) = step_taken else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        if !alpha.is_finite() || alpha <= 0.0 {
            status = SolveStatus::NumericalFailure;
            break;
        }
        x += &dx * alpha;
        if p > 0 {
            y += &dy * alpha;
        }
        z += &dz * alpha;
        s += &ds * alpha;
        tau += alpha * dtau;
        kappa += alpha * dkappa;
        if alpha < 1e-7 {
            small_steps += 1;
            if small_steps > 5 {
                status = SolveStatus::NumericalFailure;
                break;
            }
        } else {
            small_steps = 0;
        }
    }

    if matches!(status, SolveStatus::NumericalFailure | SolveStatus::IterationLimit) {
        if let Some((score, bx, by, bz, bs, bt)) = best {
            if score <= NEAR_OPTIMAL {
                status = SolveStatus::Optimal;
                x = bx;
                y = by;
                z = bz;
                s = bs;
                tau = bt;
            }
        }
    }

    // Report.
    let (sx, ss, sz_, sy) = match status {
        SolveStatus::Infeasible | SolveStatus::Unbounded => (x.clone(), s.clone(), z.clone(), y.clone()),
        _ => (&x / tau, &s / tau, &z / tau, &y / tau),
    };
    let y_orig = if p > 0 { &eq.back * &sy } else { DVector::zeros(problem.a.nrows()) };
    let pcost = c.dot(&sx);
    let dcost = -(h.dot(&sz_) + if p > 0 { b.dot(&sy) } else { 0.0 });
    let (objective_value, dual_objective) = match problem.sense {
        Sense::Minimize => (pcost, dcost),
        Sense::Maximize => (-pcost, -dcost),
    };
    let pres = {
        let rz = &ss + g * &sx - h;
        let ry = if p > 0 { a * &sx - b } else { DVector::zeros(0) };
        (ry.norm() / resy0).max(rz.norm() / resz0)
    };
    let dres = {
        let mut r = g.transpose() * &sz_ + &c;
        if p > 0 {
            r += a.transpose() * &sy;
        }
        r.norm() / resx0
    };
    ConicSolution {
        status,
        x: sx,
        s: ss.clone(),
        z: sz_.clone(),
        y: y_orig,
        objective_value,
        dual_objective,
        gap: ss.dot(&sz_),
        primal_residual: pres,
        dual_residual: dres,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{solve, ConicProblem, Sense};

    fn lp(c: &[f64], g: &[&[f64]], h: &[f64]) -> ConicProblem {
        let n = c.len();
        let mut p = ConicProblem::new(Sense::Minimize, DVector::from_row_slice(c));
        let gm = DMatrix::from_fn(g.len(), n, |i, j| g[i][j]);
        p.push_nonneg(gm, DVector::from_row_slice(h));
        p
    }

    #[test]
    fn lp_unit_interval() {
        let p = lp(&[1.0], &[&[1.0], &[-1.0]], &[1.0, 0.0]);
        let sol = solve(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.objective_value.abs() < 1e-8);
        assert!(sol.x[0].abs() < 1e-7);
    }

    #[test]
    fn lp_simplex_corner() {
        let p = lp(
            &[-1.0, -1.0],
            &[&[-1.0, 0.0], &[0.0, -1.0], &[1.0, 1.0]],
            &[0.0, 0.0, 1.0],
        );
        let sol = solve(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective_value + 1.0).abs() < 1e-8);
    }

    #[test]
    fn lp_infeasible_detected() {
        // x <= 0 and x >= 1
        let p = lp(&[1.0], &[&[1.0], &[-1.0]], &[0.0, -1.0]);
        assert_eq!(solve(&p).status, SolveStatus::Infeasible);
    }

    #[test]
    fn lp_unbounded_detected() {
        // min -x s.t. x >= 0
        let p = lp(&[-1.0], &[&[-1.0]], &[0.0]);
        assert_eq!(solve(&p).status, SolveStatus::Unbounded);
    }

    #[test]
    fn lp_with_equality() {
        // min x1 + 2 x2 s.t. x1 + x2 = 1, x >= 0 -> 1
        let mut p = lp(&[1.0, 2.0], &[&[-1.0, 0.0], &[0.0, -1.0]], &[0.0, 0.0]);
        p.push_eq(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_vec(vec![1.0]));
        let sol = solve(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective_value - 1.0).abs() < 1e-8);
        // duplicated equality rows are reduced away
        p.push_eq(DMatrix::from_row_slice(1, 2, &[2.0, 2.0]), DVector::from_vec(vec![2.0]));
        let sol = solve(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective_value - 1.0).abs() < 1e-8);
        // inconsistent equalities are infeasible
        p.push_eq(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_vec(vec![3.0]));
        assert_eq!(solve(&p).status, SolveStatus::Infeasible);
    }

    #[test]
    fn sdp_scalar_corner() {
        // max l s.t. [[1,0],[0,-l]] >= 0  -> l* = 0
        let mut p = ConicProblem::new(Sense::Maximize, DVector::from_vec(vec![1.0]));
        let h = svec(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let g = svec(&DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        p.push_psd(2, DMatrix::from_column_slice(3, 1, g.as_slice()), h);
        let sol = solve(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.objective_value.abs() < 1e-7, "{}", sol.objective_value);
    }

    #[test]
    fn sdp_determinant_boundary() {
        // max l s.t. [[2,l],[l,2]] >= 0 -> l* = 2
        let mut p = ConicProblem::new(Sense::Maximize, DVector::from_vec(vec![1.0]));
        let h = svec(&DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]));
        let g = -svec(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        p.push_psd(2, DMatrix::from_column_slice(3, 1, g.as_slice()), h);
        let sol = solve(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective_value - 2.0).abs() < 1e-7);
        let smin = crate::linalg::min_eigenvalue(&sol.s_matrix(&p.cones, 0));
        assert!(smin > -1e-7);
    }

    #[test]
    fn deterministic_repeat() {
        let mut p = ConicProblem::new(Sense::Maximize, DVector::from_vec(vec![1.0]));
        let h = svec(&DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 3.0]));
        let g = -svec(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        p.push_psd(2, DMatrix::from_column_slice(3, 1, g.as_slice()), h);
        let a = solve(&p);
        let b = solve(&p);
        assert_eq!(a.objective_value.to_bits(), b.objective_value.to_bits());
        assert_eq!(a.x, b.x);
    }
}
