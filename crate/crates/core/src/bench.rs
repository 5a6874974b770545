//! Seeded instance generators, brute-force oracles and benchmark reports.
//!
//! Random draws come from ChaCha20 seeded with `seed_from_u64`. A uniform
//! variate is `((next_u64 >> 11) + 0.5) * 2^-53`; a Gaussian is the inverse
//! normal CDF of one uniform variate.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bnc::{solve_bnc, BnCConfig};
use crate::bounds::BoxQp;
use crate::error::{QpError, Result};
use crate::geometry::{check_bounded_fulldim, combinations, enumerate_vertices, DEFAULT_GUARD};
use crate::linalg::{max_eigenvalue, min_eigenvalue, null_space, psd_tolerance, rank};
use crate::model::{objective, Polytope, QpInstance, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenKind {
    DenseConcave,
    NormMax,
    Stqp,
    BoxQp,
}

impl std::str::FromStr for GenKind {
    type Err = QpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense_concave" => Ok(Self::DenseConcave),
            "norm_max" => Ok(Self::NormMax),
            "stqp" => Ok(Self::Stqp),
            "box_qp" => Ok(Self::BoxQp),
            other => Err(QpError::InvalidInput(format!("unknown instance kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for GenKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::DenseConcave => "dense_concave",
            Self::NormMax => "norm_max",
            Self::Stqp => "stqp",
            Self::BoxQp => "box_qp",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    /// Random rows of `dense_concave` and `norm_max` (default `n`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    /// Equality count of `box_qp` (default 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equalities: Option<usize>,
    /// `box_qp` with a concave objective instead of an indefinite one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concave: Option<bool>,
    /// `norm_max` over the box `[lo, hi]^n` instead of a random polytope.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub kind: GenKind,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub params: GenParams,
}

impl GenSpec {
    pub fn new(kind: GenKind, n: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            seed,
            params: GenParams::default(),
        }
    }

    pub fn name(&self) -> String {
        format!("{}_n{}_s{}", self.kind, self.n, self.seed)
    }
}

pub struct Draws {
    rng: ChaCha20Rng,
    normal: Normal,
}

impl Draws {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
            normal: Normal::standard(),
        }
    }

    /// Independent stream `stream` of the generator seeded with `seed`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            rng,
            normal: Normal::standard(),
        }
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (-53f64).exp2()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn gaussian(&mut self) -> f64 {
        let u = self.uniform();
        self.normal.inverse_cdf(u)
    }

    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        // Row-major fill so the draw order reads like the printed matrix.
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = self.gaussian();
            }
        }
        m
    }

    pub fn gaussian_vector(&mut self, len: usize) -> DVector<f64> {
        DVector::from_fn(len, |_, _| self.gaussian())
    }

    /// Unit vector uniform on the sphere.
    pub fn direction(&mut self, len: usize) -> DVector<f64> {
        loop {
            let v = self.gaussian_vector(len);
            let nrm = v.norm();
            if nrm > 1e-12 {
                return v / nrm;
            }
        }
    }
}

/// `-U'DU` with `U` orthogonal from the QR factor of a Gaussian matrix and
/// `D` uniform on `(0, 1)`.
pub fn random_concave_matrix(draws: &mut Draws, n: usize) -> DMatrix<f64> {
    let u = draws.gaussian_matrix(n, n).qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| draws.uniform()));
    let q = -(u.transpose() * d * u);
    crate::linalg::symmetrize(&q)
}

pub fn random_symmetric(draws: &mut Draws, n: usize) -> DMatrix<f64> {
    let g = draws.gaussian_matrix(n, n);
    (&g + g.transpose()) * 0.5
}

fn sym(q: &DMatrix<f64>) -> SymMatrix {
    SymMatrix::from_symmetric_part(q)
}

/// Deterministic instance for `spec`. Polytopes that come out empty, unbounded
/// or flat are redrawn from the next sub-seed, up to 100 times.
pub fn generate_instance(spec: &GenSpec) -> Result<QpInstance> {
    if spec.n < 2 {
        return Err(QpError::InvalidInput("generated instances need n >= 2".into()));
    }
    for attempt in 0..100u64 {
        let mut draws = Draws::new(spec.seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        let inst = match spec.kind {
            GenKind::DenseConcave => dense_concave(&mut draws, spec),
            GenKind::NormMax => norm_max(&mut draws, spec),
            GenKind::Stqp => stqp(&mut draws, spec.n),
            GenKind::BoxQp => generate_box_qp_with(&mut draws, spec).to_instance(),
        }?;
        let rep = match check_bounded_fulldim(&inst.polytope) {
            Ok(r) => r,
            Err(QpError::EmptyPolytope) => continue,
            Err(e) => return Err(e),
        };
        let wants_full = !matches!(spec.kind, GenKind::Stqp | GenKind::BoxQp);
        if !rep.bounded || (wants_full && rep.reduced.is_reduced()) {
            continue;
        }
        let mut inst = inst;
        inst.name = spec.name();
        return Ok(inst);
    }
    Err(QpError::InvalidInput(format!("could not generate a valid {} instance", spec.kind)))
}

/// Rows `Ax <= 10b`, `sum x <= 100`, `x >= 0` with `A` Gaussian and `b` uniform.
fn dense_concave(draws: &mut Draws, spec: &GenSpec) -> Result<QpInstance> {
    let n = spec.n;
    let rows = spec.params.rows.unwrap_or(n);
    let a = draws.gaussian_matrix(rows, n);
    let b = DVector::from_fn(rows, |_, _| draws.uniform());
    let q = random_concave_matrix(draws, n);
    let c = draws.gaussian_vector(n);
    let mut am = DMatrix::zeros(rows + 1 + n, n);
    let mut bm = DVector::zeros(rows + 1 + n);
    am.view_mut((0, 0), (rows, n)).copy_from(&a);
    bm.rows_mut(0, rows).copy_from(&(b * 10.0));
    for j in 0..n {
        am[(rows, j)] = 1.0;
        am[(rows + 1 + j, j)] = -1.0;
    }
    bm[rows] = 100.0;
    QpInstance::new("dense_concave", sym(&q), c, Polytope::new(am, bm)?)
}

/// `min -x'x` over a box or over random halfspaces intersected with `[-2, 2]^n`.
fn norm_max(draws: &mut Draws, spec: &GenSpec) -> Result<QpInstance> {
    let n = spec.n;
    let q = -DMatrix::identity(n, n);
    let p = if let Some((lo, hi)) = spec.params.box_range {
        Polytope::boxed(&vec![lo; n], &vec![hi; n])
    } else {
        let rows = spec.params.rows.unwrap_or(n);
        let mut a = draws.gaussian_matrix(rows, n);
        for i in 0..rows {
            let nrm = a.row(i).norm();
            a.row_mut(i).scale_mut(1.0 / nrm);
        }
        let b = DVector::from_fn(rows, |_, _| draws.uniform_in(0.5, 1.5));
        Polytope::boxed(&vec![-2.0; n], &vec![2.0; n]).with_rows(&a, &b)
    };
    QpInstance::new("norm_max", sym(&q), DVector::zeros(n), p)
}

/// Standard simplex with a symmetric entrywise-uniform `Q`.
fn stqp(draws: &mut Draws, n: usize) -> Result<QpInstance> {
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = draws.uniform();
            q[(i, j)] = v;
            q[(j, i)] = v;
        }
    }
    QpInstance::new("stqp", sym(&q), DVector::zeros(n), simplex(n))
}

/// `x >= 0`, `e'x <= 1`, `-e'x <= -1`.
pub fn simplex(n: usize) -> Polytope {
    let mut a = DMatrix::zeros(n + 2, n);
    let mut b = DVector::zeros(n + 2);
    for j in 0..n {
        a[(j, j)] = -1.0;
        a[(n, j)] = 1.0;
        a[(n + 1, j)] = -1.0;
    }
    b[n] = 1.0;
    b[n + 1] = -1.0;
    Polytope { a, b }
}

/// Box QP on `[0, 1]^n`; equalities pass through an interior point.
pub fn generate_box_qp(spec: &GenSpec) -> BoxQp {
    generate_box_qp_with(&mut Draws::new(spec.seed), spec)
}

fn generate_box_qp_with(draws: &mut Draws, spec: &GenSpec) -> BoxQp {
    let n = spec.n;
    let q = if spec.params.concave.unwrap_or(false) {
        random_concave_matrix(draws, n)
    } else {
        random_symmetric(draws, n)
    };
    let c = draws.gaussian_vector(n);
    let e = spec.params.equalities.unwrap_or(0).min(n - 1);
    let eq_a = draws.gaussian_matrix(e, n);
    let xhat = DVector::from_fn(n, |_, _| draws.uniform_in(0.2, 0.8));
    let eq_d = &eq_a * xhat;
    BoxQp {
        q0: sym(&q),
        c0: c,
        eq_a,
        eq_d,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    /// Minimum over all vertices (concave objectives).
    Vertices,
    /// Minimum over stationary points of every face with a convex restriction.
    Faces,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub value: f64,
    pub argmin: DVector<f64>,
    pub method: OracleMethod,
}

/// Exact global minimum by enumeration.
///
/// Concave objectives attain the minimum at a vertex. Otherwise every face
/// spanned by linearly independent active rows is visited and the restricted
/// problem is solved when its Hessian is PSD; the global minimizer is a
/// stationary point in the relative interior of some such face.
pub fn brute_force_optimum(inst: &QpInstance) -> Result<OracleResult> {
    brute_force_optimum_guarded(inst, DEFAULT_GUARD)
}

pub fn brute_force_optimum_guarded(inst: &QpInstance, guard: u128) -> Result<OracleResult> {
    let q = inst.q_dense();
    let p = &inst.polytope;
    let rep = check_bounded_fulldim(p)?;
    if !rep.bounded {
        return Err(QpError::UnboundedPolytope);
    }
    if max_eigenvalue(&q) <= psd_tolerance(&q) {
        let verts = enumerate_vertices(p, guard)?;
        let best = verts
            .iter()
            .map(|v| (objective(&q, &inst.c, &v.point), &v.point))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .ok_or(QpError::EmptyPolytope)?;
        return Ok(OracleResult {
            value: best.0,
            argmin: best.1.clone(),
            method: OracleMethod::Vertices,
        });
    }
    face_oracle(inst, guard)
}

fn face_oracle(inst: &QpInstance, guard: u128) -> Result<OracleResult> {
    let n = inst.n();
    let m = inst.m();
    let q = inst.q_dense();
    let p = &inst.polytope;
    let total: u128 = (0..=n.min(m)).map(|k| crate::geometry::binomial(m, k)).sum();
    if total > guard {
        return Err(QpError::GuardExceeded { bases: total, guard });
    }
    let rows: Vec<usize> = (0..m).collect();
    let scale = 1.0 + p.b.amax();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for k in 0..=n.min(m) {
        for subset in combinations(&rows, k, usize::MAX) {
            let a_s = DMatrix::from_fn(k, n, |r, j| p.a[(subset[r], j)]);
            let b_s = DVector::from_fn(k, |r, _| p.b[subset[r]]);
            if k > 0 && rank(&a_s, 1e-10) < k {
                continue;
            }
            let x0 = if k == 0 {
                DVector::zeros(n)
            } else {
                let svd = a_s.clone().svd(true, true);
                match svd.solve(&b_s, 1e-12) {
                    Ok(x) => x,
                    Err(_) => continue,
                }
            };
            let basis = null_space(&a_s, n, 1e-10);
            let x = if basis.ncols() == 0 {
                x0
            } else {
                let h = basis.transpose() * &q * &basis;
                if min_eigenvalue(&h) < -psd_tolerance(&h) {
                    continue;
                }
                let g = basis.transpose() * (&q * &x0 + &inst.c);
                let svd = h.clone().svd(true, true);
                let Ok(z) = svd.solve(&(-&g), 1e-10 * svd.singular_values.max().max(1e-300)) else {
                    continue;
                };
                if (&h * &z + &g).amax() > 1e-8 * (1.0 + g.amax()) {
                    continue;
                }
                x0 + basis * z
            };
            if p.max_violation(&x) > 1e-9 * scale {
                continue;
            }
            let v = objective(&q, &inst.c, &x);
            if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                best = Some((v, x));
            }
        }
    }
    let (value, argmin) = best.ok_or(QpError::EmptyPolytope)?;
    Ok(OracleResult {
        value,
        argmin,
        method: OracleMethod::Faces,
    })
}

// ---------------------------------------------------------------------------
// Benchmark reports

#[derive(Debug, Clone, PartialEq)]
pub enum SuiteEntry {
    Spec(GenSpec),
    File(PathBuf),
}

impl SuiteEntry {
    fn label(&self) -> String {
        match self {
            Self::Spec(s) => s.name(),
            Self::File(p) => p.display().to_string(),
        }
    }

    fn load(&self) -> Result<QpInstance> {
        match self {
            Self::Spec(s) => generate_instance(s),
            Self::File(p) => QpInstance::load(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub instance: String,
    pub q_star: Option<f64>,
    pub lb: Option<f64>,
    pub ub: Option<f64>,
    pub nodes: usize,
    pub time_sec: f64,
    pub status: String,
    /// `ub - q_star` when both are known.
    pub gap: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows).expect("rows serialize")
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(["instance", "q_star", "lb", "ub", "nodes", "time_sec", "status", "gap", "error"])
                .map_err(|e| QpError::Io(e.to_string()))?;
        }
        for row in &self.rows {
            w.serialize(row).map_err(|e| QpError::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| QpError::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| QpError::Io(e.to_string()))
    }
}

fn bench_row(entry: &SuiteEntry, cfg: &BnCConfig) -> BenchRow {
    let mut row = BenchRow {
        instance: entry.label(),
        q_star: None,
        lb: None,
        ub: None,
        nodes: 0,
        time_sec: 0.0,
        status: "error".into(),
        gap: None,
        error: None,
    };
    let inst = match entry.load() {
        Ok(i) => i,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    row.instance = inst.name.clone();
    row.q_star = inst
        .known_optimum
        .or_else(|| brute_force_optimum(&inst).ok().map(|o| o.value));
    match solve_bnc(&inst, cfg) {
        Ok(r) => {
            row.lb = Some(r.lower);
            row.ub = Some(r.upper);
            row.nodes = r.nodes_processed;
            row.time_sec = r.wall_time;
            row.status = r.status.to_string();
            row.gap = row.q_star.map(|q| r.upper - q);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Solves every suite entry; failures are recorded in the row and the run continues.
pub fn run_benchmark(suite: &[SuiteEntry], cfg: &BnCConfig) -> BenchReport {
    let rows = if cfg.parallel {
        suite.par_iter().map(|e| bench_row(e, cfg)).collect()
    } else {
        suite.iter().map(|e| bench_row(e, cfg)).collect()
    };
    BenchReport { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_stays_inside() {
        let mut d = Draws::new(7);
        for _ in 0..1000 {
            let u = d.uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn dense_concave_is_concave_and_deterministic() {
        let spec = GenSpec::new(GenKind::DenseConcave, 5, 1);
        let a = generate_instance(&spec).unwrap();
        let b = generate_instance(&spec).unwrap();
        assert_eq!(a.to_json_string(), b.to_json_string());
        assert!(max_eigenvalue(&a.q_dense()) <= 1e-12);
        assert_eq!(a.m(), 2 * 5 + 1);
    }

    #[test]
    fn norm_max_box_oracle() {
        let mut spec = GenSpec::new(GenKind::NormMax, 3, 0);
        spec.params.box_range = Some((-1.0, 2.0));
        let inst = generate_instance(&spec).unwrap();
        let o = brute_force_optimum(&inst).unwrap();
        assert!((o.value + 12.0).abs() < 1e-9);
        assert_eq!(o.method, OracleMethod::Vertices);
    }

    #[test]
    fn bilinear_face_oracle() {
        let q = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let inst = QpInstance::new("b", sym(&q), DVector::zeros(2), Polytope::unit_box(2)).unwrap();
        let o = brute_force_optimum(&inst).unwrap();
        assert!(o.value.abs() < 1e-12);
        assert_eq!(o.method, OracleMethod::Faces);
    }

    #[test]
    fn face_oracle_interior_minimum() {
        // x^2 - x - y^2 on the unit box: minimum -5/4 at (1/2, 1).
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let c = DVector::from_vec(vec![-0.5, 0.0]);
        let inst = QpInstance::new("f", sym(&q), c, Polytope::unit_box(2)).unwrap();
        let o = brute_force_optimum(&inst).unwrap();
        assert!((o.value + 1.25).abs() < 1e-12, "{}", o.value);
        assert!((o.argmin[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn benchmark_rows() {
        let suite: Vec<SuiteEntry> = (0..3)
            .map(|s| {
                let mut spec = GenSpec::new(GenKind::NormMax, 2, s);
                spec.params.box_range = Some((-1.0, 2.0));
                SuiteEntry::Spec(spec)
            })
            .collect();
        let report = run_benchmark(&suite, &BnCConfig::default());
        assert_eq!(report.rows.len(), 3);
        for row in &report.rows {
            assert_eq!(row.status, "optimal_within_eps");
            assert!((row.ub.unwrap() - row.q_star.unwrap()).abs() < 1e-4);
        }
        let csv = report.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(run_benchmark(&[], &BnCConfig::default()).rows.is_empty());
    }

    #[test]
    fn missing_file_is_recorded() {
        let report = run_benchmark(&[SuiteEntry::File("/nonexistent.json".into())], &BnCConfig::default());
        assert_eq!(report.rows[0].status, "error");
        assert!(report.rows[0].error.is_some());
    }
}
