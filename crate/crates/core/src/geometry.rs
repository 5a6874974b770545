//! Polytope preprocessing and vertex machinery.

use nalgebra::{DMatrix, DVector};

use crate::conic::{solve_lp, ConicSolution, SolveStatus};
use crate::error::{QpError, Result};
use crate::linalg::null_space;
use crate::model::{objective, Polytope, QpInstance, TOL_FEAS};

/// Default guard on the number of candidate bases in [`enumerate_vertices`].
pub const DEFAULT_GUARD: u128 = 2_000_000;
/// Dedup tolerance for vertices (absolute, max-norm).
pub const DEDUP_TOL: f64 = 1e-9;
/// Strict improvement required of a descent pivot.
pub const TOL_IMPR: f64 = 1e-9;

const ACTIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub point: DVector<f64>,
    /// Sorted indices of rows tight at `point`.
    pub active_set: Vec<usize>,
    /// `n` rows of `active_set` with an invertible submatrix.
    pub basis: Vec<usize>,
}

impl Vertex {
    pub fn is_degenerate(&self) -> bool {
        self.active_set.len() > self.basis.len()
    }
}

/// A full-dimensional polytope in coordinates `z` with `x = origin + embed z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedPolytope {
    pub inner: Polytope,
    pub origin: DVector<f64>,
    /// Orthonormal columns spanning the affine hull directions.
    pub embed: DMatrix<f64>,
    pub implicit_equalities: Vec<usize>,
    /// Original row index of every row of `inner`.
    pub rows: Vec<usize>,
}

impl ReducedPolytope {
    pub fn dim(&self) -> usize {
        self.embed.ncols()
    }

    pub fn is_reduced(&self) -> bool {
        !self.implicit_equalities.is_empty()
    }

    pub fn to_original(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.origin + &self.embed * z
    }

    pub fn to_reduced(&self, x: &DVector<f64>) -> DVector<f64> {
        self.embed.transpose() * (x - &self.origin)
    }

    /// Objective data `(Q', c', const)` with `q(origin + E z) = z'Q'z + 2c''z + const`.
    pub fn reduce_objective(
        &self,
        q: &DMatrix<f64>,
        c: &DVector<f64>,
    ) -> (DMatrix<f64>, DVector<f64>, f64) {
        let e = &self.embed;
        let qr = crate::linalg::symmetrize(&(e.transpose() * q * e));
        let cr = e.transpose() * (q * &self.origin + c);
        (qr, cr, objective(q, c, &self.origin))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundednessReport {
    pub bounded: bool,
    pub reduced: ReducedPolytope,
    /// Coordinate ranges `(lo, hi)` of `P` when bounded.
    pub ranges: Option<(DVector<f64>, DVector<f64>)>,
}

fn lp_status_error(sol: &ConicSolution) -> QpError {
    match sol.status {
        SolveStatus::Infeasible => QpError::EmptyPolytope,
        SolveStatus::Unbounded => QpError::UnboundedPolytope,
        s => QpError::Numerical(format!("LP ended with {s:?}")),
    }
}

/// Some point of `P`, or `EmptyPolytope`.
pub fn feasible_point(p: &Polytope) -> Result<DVector<f64>> {
    let sol = solve_lp(&DVector::zeros(p.dim()), &p.a, &p.b, None);
    if sol.is_optimal() {
        Ok(sol.x)
    } else {
        Err(lp_status_error(&sol))
    }
}

/// LP emptiness test.
pub fn is_empty(p: &Polytope) -> Result<bool> {
    match feasible_point(p) {
        Ok(_) => Ok(false),
        Err(QpError::EmptyPolytope) => Ok(true),
        Err(e) => Err(e),
    }
}

fn row_norms(a: &DMatrix<f64>) -> Vec<f64> {
    (0..a.nrows()).map(|i| a.row(i).norm()).collect()
}

fn chebyshev_lp(p: &Polytope) -> ConicSolution {
    let (m, n) = (p.nrows(), p.dim());
    let norms = row_norms(&p.a);
    let mut g = DMatrix::zeros(m, n + 1);
    g.view_mut((0, 0), (m, n)).copy_from(&p.a);
    for i in 0..m {
        g[(i, n)] = norms[i];
    }
    let mut c = DVector::zeros(n + 1);
    c[n] = -1.0;
    solve_lp(&c, &g, &p.b, None)
}

/// Center and radius of the largest ball inside `P`.
pub fn chebyshev_center(p: &Polytope) -> Result<(DVector<f64>, f64)> {
    let n = p.dim();
    let sol = chebyshev_lp(p);
    if !sol.is_optimal() {
        return Err(lp_status_error(&sol));
    }
    let r = sol.x[n];
    if r < -TOL_FEAS {
        return Err(QpError::EmptyPolytope);
    }
    if r <= TOL_FEAS {
        return Err(QpError::LowerDimensional);
    }
    Ok((sol.x.rows(0, n).into_owned(), r))
}

/// Boundedness by coordinate LPs and affine-hull reduction by implicit equalities.
pub fn check_bounded_fulldim(p: &Polytope) -> Result<BoundednessReport> {
    let n = p.dim();
    let m = p.nrows();
    let x0 = feasible_point(p)?;

    let mut bounded = true;
    let mut lo = DVector::zeros(n);
    let mut hi = DVector::zeros(n);
    for k in 0..n {
        for sign in [1.0, -1.0] {
            let mut c = DVector::zeros(n);
            c[k] = sign;
            let sol = solve_lp(&c, &p.a, &p.b, None);
            match sol.status {
                SolveStatus::Optimal if sign > 0.0 => lo[k] = sol.objective_value,
                SolveStatus::Optimal => hi[k] = -sol.objective_value,
                SolveStatus::Unbounded => bounded = false,
                _ => return Err(lp_status_error(&sol)),
            }
        }
        if !bounded {
            break;
        }
    }
    let ranges = bounded.then_some((lo, hi));

    let norms = row_norms(&p.a);
    let mut implicit = Vec::new();
    let cheb = chebyshev_lp(p);
    let full = cheb.is_optimal() && cheb.x[n] > TOL_FEAS;
    if !full {
        for i in 0..m {
            if norms[i] == 0.0 {
                continue;
            }
            // Row i is implicit when min A_i x over P reaches b_i.
            let c = p.a.row(i).transpose();
            let sol = solve_lp(&c, &p.a, &p.b, None);
            let tight = match sol.status {
                SolveStatus::Optimal => (p.b[i] - sol.objective_value) / norms[i] <= 1e-7,
                _ => false,
            };
            if tight {
                implicit.push(i);
            }
        }
    }

    let reduced = if implicit.is_empty() {
        ReducedPolytope {
            inner: p.clone(),
            origin: DVector::zeros(n),
            embed: DMatrix::identity(n, n),
            implicit_equalities: implicit,
            rows: (0..m).collect(),
        }
    } else {
        let e = DMatrix::from_fn(implicit.len(), n, |r, j| p.a[(implicit[r], j)]);
        let f = DVector::from_fn(implicit.len(), |r, _| p.b[implicit[r]]);
        // Project the feasible point onto the affine hull.
        let origin = match e.clone().pseudo_inverse(1e-12) {
            Ok(pinv) => &x0 + pinv * (&f - &e * &x0),
            Err(_) => x0.clone(),
        };
        let basis = null_space(&e, n, 1e-9);
        let keep: Vec<usize> = (0..m).filter(|i| !implicit.contains(i)).collect();
        let k = basis.ncols();
        let a_full = &p.a * &basis;
        let b_full = &p.b - &p.a * &origin;
        let kept: Vec<usize> = keep
            .into_iter()
            .filter(|&i| k > 0 && a_full.row(i).norm() > 1e-12 * (1.0 + norms[i]))
            .collect();
        let inner = Polytope {
            a: DMatrix::from_fn(kept.len(), k, |r, j| a_full[(kept[r], j)]),
            b: DVector::from_fn(kept.len(), |r, _| b_full[kept[r]]),
        };
        ReducedPolytope {
            inner,
            origin,
            embed: basis,
            implicit_equalities: implicit,
            rows: kept,
        }
    };
    Ok(BoundednessReport {
        bounded,
        reduced,
        ranges,
    })
}

fn slack_scale(p: &Polytope, i: usize, x: &DVector<f64>) -> f64 {
    let row_abs: f64 = p.a.row(i).iter().map(|v| v.abs()).sum();
    1.0 + p.b[i].abs() + row_abs * x.amax()
}

fn active_rows(p: &Polytope, x: &DVector<f64>, tol: f64) -> Vec<usize> {
    let ax = &p.a * x;
    (0..p.nrows())
        .filter(|&i| p.b[i] - ax[i] <= tol * slack_scale(p, i, x))
        .collect()
}

/// First `n` linearly independent rows of `rows`, in the given order.
fn greedy_basis(a: &DMatrix<f64>, rows: &[usize]) -> Vec<usize> {
    let n = a.ncols();
    let mut ortho: Vec<DVector<f64>> = Vec::new();
    let mut basis = Vec::new();
    for &i in rows {
        let mut v = a.row(i).transpose();
        let nv = v.norm();
        if nv == 0.0 {
            continue;
        }
        for u in &ortho {
            let proj = u.dot(&v);
            v -= u * proj;
        }
        let r = v.norm();
        if r > 1e-9 * nv {
            ortho.push(v / r);
            basis.push(i);
            if basis.len() == n {
                break;
            }
        }
    }
    basis
}

fn basis_matrix(a: &DMatrix<f64>, basis: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(basis.len(), a.ncols(), |r, j| a[(basis[r], j)])
}

fn well_conditioned(ab: &DMatrix<f64>) -> bool {
    let sv = ab.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    smax > 0.0 && smin > 1e-11 * smax
}

/// Build a vertex at `x` with `basis`, snapping the point onto the basis rows.
fn make_vertex(p: &Polytope, x: &DVector<f64>, basis: Vec<usize>) -> Option<Vertex> {
    let ab = basis_matrix(&p.a, &basis);
    let bb = DVector::from_fn(basis.len(), |r, _| p.b[basis[r]]);
    let snapped = ab.lu().solve(&bb)?;
    let point = if (&snapped - x).amax() <= 1e-6 * (1.0 + x.amax()) && p.contains(&snapped, 1e-8 * (1.0 + snapped.amax())) {
        snapped
    } else {
        x.clone()
    };
    let active_set = active_rows(p, &point, ACTIVE_TOL);
    let mut basis = basis;
    basis.sort_unstable();
    Some(Vertex {
        point,
        active_set,
        basis,
    })
}

/// Vertex at `x` if the tight rows have full rank.
pub fn vertex_at(p: &Polytope, x: &DVector<f64>) -> Option<Vertex> {
    let act = active_rows(p, x, ACTIVE_TOL);
    let basis = greedy_basis(&p.a, &act);
    if basis.len() < p.dim() {
        return None;
    }
    make_vertex(p, x, basis)
}

/// Move from a feasible `x` to a vertex without increasing `c'x`.
pub fn purify(p: &Polytope, x: &DVector<f64>, c: &DVector<f64>) -> Result<Vertex> {
    let n = p.dim();
    let mut x = x.clone();
    for _ in 0..(4 * n + 4) {
        let act = active_rows(p, &x, ACTIVE_TOL);
        let basis = greedy_basis(&p.a, &act);
        if basis.len() == n {
            return make_vertex(p, &x, basis).ok_or(QpError::SingularBasis);
        }
        let ab = basis_matrix(&p.a, &basis);
        let ns = null_space(&ab, n, 1e-9);
        let mut d = ns.column(0).into_owned();
        if c.dot(&d) > 0.0 {
            d = -d;
        }
        let step = |d: &DVector<f64>| {
            let ad = &p.a * d;
            let ax = &p.a * &x;
            let mut theta = f64::INFINITY;
            let mut hit = None;
            for i in 0..p.nrows() {
                if act.contains(&i) {
                    continue;
                }
                let rn = p.a.row(i).norm();
                if ad[i] > 1e-12 * rn {
                    let t = ((p.b[i] - ax[i]) / ad[i]).max(0.0);
                    if t < theta {
                        theta = t;
                        hit = Some(i);
                    }
                }
            }
            (theta, hit)
        };
        let (mut theta, mut hit) = step(&d);
        if hit.is_none() {
            if c.dot(&d).abs() > 1e-12 * c.norm() {
                return Err(QpError::UnboundedPolytope);
            }
            d = -d;
            (theta, hit) = step(&d);
            if hit.is_none() {
                return Err(QpError::UnboundedPolytope);
            }
        }
        x += d * theta;
    }
    Err(QpError::Numerical("vertex purification did not terminate".into()))
}

/// A vertex minimizing `c'x` over `P`.
pub fn lp_vertex(p: &Polytope, c: &DVector<f64>) -> Result<Vertex> {
    let sol = solve_lp(c, &p.a, &p.b, None);
    if !sol.is_optimal() {
        return Err(lp_status_error(&sol));
    }
    purify(p, &sol.x, c)
}

pub(crate) fn combinations(items: &[usize], k: usize, limit: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let len = items.len();
    if k > len {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        if out.len() >= limit {
            return out;
        }
        let mut i = k;
        while i > 0 && idx[i - 1] == i - 1 + len - k {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Vertices reachable from `v` by one feasible pivot.
///
/// At degenerate vertices every basis drawn from the active set is tried
/// (up to a fixed cap) and the union of distinct neighbours is returned.
pub fn adjacent_vertices(p: &Polytope, v: &Vertex) -> Vec<Vertex> {
    let n = p.dim();
    let bases: Vec<Vec<usize>> = if v.is_degenerate() {
        combinations(&v.active_set, n, 512)
            .into_iter()
            .filter(|b| well_conditioned(&basis_matrix(&p.a, b)))
            .collect()
    } else {
        vec![v.basis.clone()]
    };
    let ax = &p.a * &v.point;
    let mut out: Vec<Vertex> = Vec::new();
    for basis in bases {
        let ab = basis_matrix(&p.a, &basis);
        let Some(inv) = ab.try_inverse() else {
            continue;
        };
        for leave in 0..n {
            let d = -inv.column(leave).into_owned();
            let ad = &p.a * &d;
            let blocked = v.active_set.iter().any(|&j| {
                !basis.contains(&j) && ad[j] > 1e-10 * p.a.row(j).norm() * d.norm()
            });
            if blocked {
                continue;
            }
            let mut theta = f64::INFINITY;
            let mut enter = None;
            for j in 0..p.nrows() {
                if v.active_set.contains(&j) {
                    continue;
                }
                if ad[j] > 1e-12 * p.a.row(j).norm() * d.norm() {
                    let t = (p.b[j] - ax[j]) / ad[j];
                    if t < theta {
                        theta = t;
                        enter = Some(j);
                    }
                }
            }
            let Some(enter) = enter else {
                continue;
            };
            if theta <= 0.0 {
                continue;
            }
            let x = &v.point + &d * theta;
            let mut nb: Vec<usize> = basis.clone();
            nb[leave] = enter;
            let Some(w) = make_vertex(p, &x, nb) else {
                continue;
            };
            if out.iter().all(|o| (&o.point - &w.point).amax() > DEDUP_TOL)
                && (&w.point - &v.point).amax() > DEDUP_TOL
            {
                out.push(w);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descent {
    pub vertex: Vertex,
    pub value: f64,
    pub degenerate: bool,
    /// Set when the pivot budget ran out.
    pub stalled: bool,
}

/// Local descent to a vertex no worse than its neighbours.
pub fn local_vertex_descent(inst: &QpInstance, start: &DVector<f64>) -> Result<Descent> {
    let p = &inst.polytope;
    if start.len() != inst.n() {
        return Err(QpError::Dimension("start point has the wrong length".into()));
    }
    let q = inst.q_dense();
    let c = &inst.c;
    let f = |x: &DVector<f64>| objective(&q, c, x);
    let f0 = f(start);
    let grad = (&q * start + c) * 2.0;
    let mut v = lp_vertex(p, &grad)?;
    if f(&v.point) > f0 + TOL_IMPR * (1.0 + f0.abs()) {
        // Indefinite objective: the linearization may mislead; purify along the
        // current gradient instead.
        let alt = purify(p, start, &grad)?;
        if f(&alt.point) < f(&v.point) {
            v = alt;
        }
    }
    let mut value = f(&v.point);
    let mut stalled = true;
    for _ in 0..10_000 {
        let mut moved = false;
        for w in adjacent_vertices(p, &v) {
            let fw = f(&w.point);
            if fw < value - TOL_IMPR {
                v = w;
                value = fw;
                moved = true;
                break;
            }
        }
        if !moved {
            stalled = false;
            break;
        }
    }
    let degenerate = v.is_degenerate();
    Ok(Descent {
        vertex: v,
        value,
        degenerate,
        stalled,
    })
}

/// `P ∩ {d'x <= d'point}` and `P ∩ {d'x >= d'point}`.
pub fn partition_at(
    p: &Polytope,
    point: &DVector<f64>,
    direction: &DVector<f64>,
) -> Result<(Polytope, Polytope)> {
    if direction.len() != p.dim() || point.len() != p.dim() {
        return Err(QpError::Dimension("partition data has the wrong length".into()));
    }
    if direction.amax() == 0.0 {
        return Err(QpError::InvalidInput("zero partition direction".into()));
    }
    let rhs = direction.dot(point);
    Ok((p.with_row(direction, rhs), p.with_row(&(-direction), -rhs)))
}

pub(crate) fn binomial(m: usize, k: usize) -> u128 {
    if k > m {
        return 0;
    }
    let k = k.min(m - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (m - i) as u128 / (i + 1) as u128;
    }
    r
}

/// Every vertex of `P` by brute force over row subsets, in basis order.
pub fn enumerate_vertices(p: &Polytope, guard: u128) -> Result<Vec<Vertex>> {
    let (m, n) = (p.nrows(), p.dim());
    let count = binomial(m, n);
    if count > guard {
        return Err(QpError::GuardExceeded {
            bases: count,
            guard,
        });
    }
    let rows: Vec<usize> = (0..m).collect();
    let mut out: Vec<Vertex> = Vec::new();
    for basis in combinations(&rows, n, usize::MAX) {
        let ab = basis_matrix(&p.a, &basis);
        if !well_conditioned(&ab) {
            continue;
        }
        let bb = DVector::from_fn(n, |r, _| p.b[basis[r]]);
        let Some(x) = ab.lu().solve(&bb) else {
            continue;
        };
        let ax = &p.a * &x;
        let feasible = (0..m).all(|i| ax[i] - p.b[i] <= ACTIVE_TOL * slack_scale(p, i, &x));
        if !feasible {
            continue;
        }
        if out.iter().any(|v| (&v.point - &x).amax() <= DEDUP_TOL) {
            continue;
        }
        let active_set = active_rows(p, &x, ACTIVE_TOL);
        out.push(Vertex {
            point: x,
            active_set,
            basis,
        });
    }
    Ok(out)
}
