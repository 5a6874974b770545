//! Dense conic solver layer.
//!
//! Every program is posed in the inequality standard form
//!
//! ```text
//!     minimize    c'x
//!     subject to  G x + s = h,   s in K
//!                 A x     = b
//! ```
//!
//! with `x` free and `K` an ordered product of nonnegative orthants and PSD
//! cones (vectorized with `svec`). The dual is
//!
//! ```text
//!     maximize   -h'z - b'y
//!     subject to  G'z + A'y + c = 0,   z in K.
//! ```
//!
//! The shipped backend is a homogeneous self-dual primal-dual interior-point
//! method with Nesterov-Todd scaling and Mehrotra correction ([`ipm`]). Convex
//! QPs use a dedicated primal-dual method over the same layout ([`qp`]).

pub mod ipm;
pub mod qp;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{smat, svec_len};

pub use ipm::{InteriorPoint, IpmOptions};
pub use qp::solve_convex_qp;

/// One block of the cone `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    /// Nonnegative orthant of the given dimension.
    Nonneg(usize),
    /// PSD cone of the given matrix order (occupies `s(s+1)/2` rows).
    Psd(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Nonneg(k) => k,
            Cone::Psd(s) => svec_len(s),
        }
    }

    /// Barrier degree (contribution to the complementarity normalization).
    pub fn degree(&self) -> usize {
        match *self {
            Cone::Nonneg(k) => k,
            Cone::Psd(s) => s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// A conic program in inequality standard form.
#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub sense: Sense,
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProblem {
    /// An empty problem over `n` free variables; rows are appended with the builders.
    pub fn new(sense: Sense, c: DVector<f64>) -> Self {
        let n = c.len();
        Self {
            sense,
            c,
            g: DMatrix::zeros(0, n),
            h: DVector::zeros(0),
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            cones: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn cone_dim(&self) -> usize {
        self.cones.iter().map(Cone::dim).sum()
    }

    /// Append a nonnegative block `h - G x >= 0`.
    pub fn push_nonneg(&mut self, g: DMatrix<f64>, h: DVector<f64>) {
        assert_eq!(g.ncols(), self.num_vars());
        assert_eq!(g.nrows(), h.len());
        self.cones.push(Cone::Nonneg(g.nrows()));
        self.append_rows(g, h);
    }

    /// Append a PSD block `smat(h - G x) >= 0` of order `s`.
    pub fn push_psd(&mut self, s: usize, g: DMatrix<f64>, h: DVector<f64>) {
        assert_eq!(g.ncols(), self.num_vars());
        assert_eq!(g.nrows(), svec_len(s));
        assert_eq!(h.len(), svec_len(s));
        self.append_rows(g, h);
        self.cones.push(Cone::Psd(s));
    }

    /// Append equality rows `A x = b`.
    pub fn push_eq(&mut self, a: DMatrix<f64>, b: DVector<f64>) {
        assert_eq!(a.ncols(), self.num_vars());
        assert_eq!(a.nrows(), b.len());
        let n = self.num_vars();
        let p = self.a.nrows();
        let mut na = DMatrix::zeros(p + a.nrows(), n);
        na.view_mut((0, 0), (p, n)).copy_from(&self.a);
        na.view_mut((p, 0), (a.nrows(), n)).copy_from(&a);
        let mut nb = DVector::zeros(p + b.len());
        nb.rows_mut(0, p).copy_from(&self.b);
        nb.rows_mut(p, b.len()).copy_from(&b);
        self.a = na;
        self.b = nb;
    }

    fn append_rows(&mut self, g: DMatrix<f64>, h: DVector<f64>) {
        let n = self.num_vars();
        let r = self.g.nrows();
        let mut ng = DMatrix::zeros(r + g.nrows(), n);
        ng.view_mut((0, 0), (r, n)).copy_from(&self.g);
        ng.view_mut((r, 0), (g.nrows(), n)).copy_from(&g);
        let mut nh = DVector::zeros(r + h.len());
        nh.rows_mut(0, r).copy_from(&self.h);
        nh.rows_mut(r, h.len()).copy_from(&h);
        self.g = ng;
        self.h = nh;
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.num_vars();
        if self.g.ncols() != n || self.a.ncols() != n {
            return Err("column count differs from variable count".into());
        }
        if self.g.nrows() != self.h.len() || self.a.nrows() != self.b.len() {
            return Err("row count differs from right-hand side length".into());
        }
        if self.cone_dim() != self.h.len() {
            return Err(format!(
                "cone dimension {} differs from inequality rows {}",
                self.cone_dim(),
                self.h.len()
            ));
        }
        let finite = self.c.iter().all(|v| v.is_finite())
            && self.g.iter().all(|v| v.is_finite())
            && self.h.iter().all(|v| v.is_finite())
            && self.a.iter().all(|v| v.is_finite())
            && self.b.iter().all(|v| v.is_finite());
        if !finite {
            return Err("non-finite problem data".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
    IterationLimit,
}

/// Primal-dual solution of a [`ConicProblem`].
///
/// `objective_value` is reported in the problem's own sense. For
/// [`Sense::Maximize`] the dual `z, y` satisfy `G'z + A'y = c`.
#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: DVector<f64>,
    pub s: DVector<f64>,
    pub z: DVector<f64>,
    pub y: DVector<f64>,
    pub objective_value: f64,
    pub dual_objective: f64,
    /// Complementarity `s'z`.
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Slice of the cone dual `z` belonging to block `k`.
    pub fn z_block(&self, cones: &[Cone], k: usize) -> DVector<f64> {
        self.block(&self.z, cones, k)
    }

    pub fn s_block(&self, cones: &[Cone], k: usize) -> DVector<f64> {
        self.block(&self.s, cones, k)
    }

    /// PSD block `k` of `z` as a symmetric matrix.
    pub fn z_matrix(&self, cones: &[Cone], k: usize) -> DMatrix<f64> {
        match cones[k] {
            Cone::Psd(s) => smat(self.z_block(cones, k).as_slice(), s),
            Cone::Nonneg(_) => panic!("block {k} is not a PSD block"),
        }
    }

    pub fn s_matrix(&self, cones: &[Cone], k: usize) -> DMatrix<f64> {
        match cones[k] {
            Cone::Psd(s) => smat(self.s_block(cones, k).as_slice(), s),
            Cone::Nonneg(_) => panic!("block {k} is not a PSD block"),
        }
    }

    fn block(&self, v: &DVector<f64>, cones: &[Cone], k: usize) -> DVector<f64> {
        let off: usize = cones[..k].iter().map(Cone::dim).sum();
        v.rows(off, cones[k].dim()).into_owned()
    }
}

/// Replaceable conic backend.
pub trait ConicBackend: Send + Sync {
    fn solve(&self, problem: &ConicProblem) -> ConicSolution;
}

/// Solve with the shipped interior-point backend and default options.
pub fn solve(problem: &ConicProblem) -> ConicSolution {
    InteriorPoint::default().solve(problem)
}

/// `min c'x s.t. a_ub x <= b_ub, a_eq x = b_eq`.
pub fn solve_lp(
    c: &DVector<f64>,
    a_ub: &DMatrix<f64>,
    b_ub: &DVector<f64>,
    a_eq: Option<(&DMatrix<f64>, &DVector<f64>)>,
) -> ConicSolution {
    let mut p = ConicProblem::new(Sense::Minimize, c.clone());
    p.push_nonneg(a_ub.clone(), b_ub.clone());
    if let Some((a, b)) = a_eq {
        p.push_eq(a.clone(), b.clone());
    }
    solve(&p)
}

/// Solve a problem containing PSD blocks; identical to [`solve`].
pub fn solve_sdp(problem: &ConicProblem) -> ConicSolution {
    solve(problem)
}
