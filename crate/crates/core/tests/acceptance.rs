//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use qpbc::bench::{
    brute_force_optimum, generate_box_qp, generate_instance, random_concave_matrix, random_symmetric,
    Draws, GenKind, GenSpec,
};
use qpbc::bnc::{solve_bnc, BnCConfig, BnCResult, BnCStatus};
use qpbc::bounds::{
    hgg_exactness_check, solve_bound, solve_relaxation, srlt_bound, stqp_conv_bound, BoundVariant,
};
use qpbc::cuts::{konno_step, local_frame, make_concavity_cut, tuy_extension, FrameOutcome};
use qpbc::geometry::{chebyshev_center, enumerate_vertices, DEFAULT_GUARD};
use qpbc::model::{eval_objective, Polytope, QpInstance, SymMatrix};
use qpbc::QpError;

type Outcome = Result<String, String>;

fn q(inst: &QpInstance, x: &DVector<f64>) -> f64 {
    eval_objective(inst, x).unwrap()
}

fn instance(q: DMatrix<f64>, c: DVector<f64>, p: Polytope) -> QpInstance {
    QpInstance::new("t", SymMatrix::from_symmetric_part(&q), c, p).unwrap()
}

fn bound(inst: &QpInstance, v: BoundVariant) -> f64 {
    solve_bound(inst, v, None).unwrap().value
}

fn spec(kind: GenKind, n: usize, seed: u64, rows: Option<usize>) -> GenSpec {
    let mut s = GenSpec::new(kind, n, seed);
    s.params.rows = rows;
    s
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bilinear_box() -> QpInstance {
    instance(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        DVector::zeros(2),
        Polytope::unit_box(2),
    )
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let inst = bilinear_box();
    let l = bound(&inst, BoundVariant::L);
    let l1 = bound(&inst, BoundVariant::L1);
    let secs = t.elapsed().as_secs_f64();
    ensure(
        l.abs() <= 1e-6 && l1 <= -0.125 + 1e-6 && secs < 1.0,
        format!("L = {l:.3e}, L1 = {l1:.9}, {secs:.3}s"),
    )
}

/// Polytope of a dense instance with `total` rows, objective concave or indefinite.
fn mixed_instance(k: u64) -> QpInstance {
    if k % 2 == 0 {
        let n = 4 + (k as usize / 2) % 3;
        let mut inst = generate_instance(&spec(GenKind::DenseConcave, n, k, Some(13 - n))).unwrap();
        if k % 4 == 2 {
            let mut d = Draws::new(1000 + k);
            inst.q = SymMatrix::from_symmetric_part(&random_symmetric(&mut d, n));
        }
        inst
    } else {
        let n = 3 + k as usize % 5;
        let mut s = GenSpec::new(GenKind::BoxQp, n, k);
        s.params.equalities = Some((k as usize % 3).min((14 - 2 * n) / 2));
        s.params.concave = Some(k % 3 == 0);
        generate_box_qp(&s).to_instance().unwrap()
    }
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0_f64;
    for k in 0..20 {
        let inst = mixed_instance(k);
        assert!(inst.n() <= 8 && inst.m() <= 14);
        let l = bound(&inst, BoundVariant::L);
        let r = solve_relaxation(&inst, false).unwrap().value;
        worst = worst.max((l - r).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(worst <= 1e-5 && secs < 30.0, format!("max |L - DD0| = {worst:.2e}, {secs:.2}s"))
}

fn concave_instance(k: u64) -> QpInstance {
    if k % 2 == 0 {
        let n = 3 + (k as usize / 2) % 6;
        generate_instance(&spec(GenKind::DenseConcave, n, k, None)).unwrap()
    } else {
        let n = 2 + k as usize % 4;
        generate_instance(&spec(GenKind::NormMax, n, k, Some(2 * n))).unwrap()
    }
}

fn concave_box(k: u64) -> QpInstance {
    let mut d = Draws::new(5000 + k);
    let n = 2 + k as usize % 5;
    let qm = random_concave_matrix(&mut d, n);
    let c = d.gaussian_vector(n);
    let lo: Vec<f64> = (0..n).map(|_| d.uniform_in(-2.0, 0.0)).collect();
    let hi: Vec<f64> = lo.iter().map(|l| l + d.uniform_in(0.5, 2.0)).collect();
    instance(qm, c, Polytope::boxed(&lo, &hi))
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let mut worst = f64::NEG_INFINITY;
    for k in 0..50 {
        let inst = concave_instance(k);
        let opt = brute_force_optimum(&inst).unwrap().value;
        for v in [BoundVariant::L, BoundVariant::L1] {
            worst = worst.max(bound(&inst, v) - opt);
        }
    }
    for k in 0..10 {
        let inst = concave_box(k);
        let opt = brute_force_optimum(&inst).unwrap().value;
        worst = worst.max(bound(&inst, BoundVariant::Box) - opt);
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-6 && secs < 60.0,
        format!("max (bound - optimum) = {worst:.2e} over L, L1, BOX; {secs:.2}s"),
    )
}

fn criterion_4() -> Outcome {
    let mut convex = 0.0_f64;
    for k in 0..10 {
        let mut d = Draws::new(7000 + k);
        let n = 3 + k as usize % 4;
        let base = generate_instance(&spec(GenKind::DenseConcave, n, 7000 + k, None)).unwrap();
        let qm = -random_concave_matrix(&mut d, n);
        let inst = instance(qm, d.gaussian_vector(n), base.polytope.clone());
        let opt = brute_force_optimum(&inst).unwrap().value;
        convex = convex.max((bound(&inst, BoundVariant::L) - opt).abs());
    }
    let mut single = 0.0_f64;
    for k in 0..5 {
        let mut d = Draws::new(8000 + k);
        let n = 2 + k as usize % 3;
        let x: Vec<f64> = (0..n).map(|_| d.gaussian()).collect();
        let xv = DVector::from_row_slice(&x);
        let inst = instance(random_symmetric(&mut d, n), d.gaussian_vector(n), Polytope::boxed(&x, &x));
        single = single.max((bound(&inst, BoundVariant::L) - q(&inst, &xv)).abs());
    }
    let neg_sq = instance(DMatrix::from_element(1, 1, -1.0), DVector::zeros(1), Polytope::unit_box(1));
    let cert = hgg_exactness_check(&neg_sq, &DVector::from_element(1, 1.0)).unwrap();
    ensure(
        convex <= 1e-5 && single <= 1e-8 && cert.is_some(),
        format!(
            "convex max err {convex:.2e}, singleton max err {single:.2e}, certificate at 1: {}",
            cert.is_some()
        ),
    )
}

fn invariance_instance(k: u64) -> QpInstance {
    if k % 2 == 0 {
        let n = 2 + k as usize % 3;
        generate_instance(&spec(GenKind::NormMax, n, 300 + k, Some(2 * n))).unwrap()
    } else {
        let n = 3 + k as usize % 3;
        generate_box_qp(&GenSpec::new(GenKind::BoxQp, n, 300 + k)).to_instance().unwrap()
    }
}

fn criterion_5() -> Outcome {
    let mut redundant = 0.0_f64;
    for k in 0..5 {
        let inst = invariance_instance(k);
        let mut d = Draws::new(400 + k);
        let p = &inst.polytope;
        let extra = 1 + k as usize % 3;
        let mut a = DMatrix::zeros(extra, inst.n());
        let mut b = DVector::zeros(extra);
        for r in 0..extra {
            let lam = DVector::from_fn(p.nrows(), |_, _| d.uniform());
            a.set_row(r, &(lam.transpose() * &p.a));
            b[r] = lam.dot(&p.b) + d.uniform();
        }
        let aug = inst.with_polytope(p.with_rows(&a, &b));
        redundant = redundant.max((bound(&inst, BoundVariant::L) - bound(&aug, BoundVariant::L)).abs());
    }

    let mut affine = 0.0_f64;
    for k in 0..5 {
        let inst = invariance_instance(k + 5);
        let n = inst.n();
        let mut d = Draws::new(500 + k);
        let u = d.gaussian_matrix(n, n).qr().q();
        let scale = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| d.uniform_in(0.5, 2.0)));
        let m = u * scale;
        let shift = d.gaussian_vector(n);
        // x = M z + shift
        let qd = inst.q_dense();
        let q2 = m.transpose() * &qd * &m;
        let c2 = m.transpose() * (&qd * &shift + &inst.c);
        let a2 = &inst.polytope.a * &m;
        let b2 = &inst.polytope.b - &inst.polytope.a * &shift;
        let mapped = instance(q2, c2, Polytope::new(a2, b2).unwrap());
        let constant = q(&inst, &shift);
        affine = affine.max((bound(&inst, BoundVariant::L) - bound(&mapped, BoundVariant::L) - constant).abs());
    }

    let mut monotone = f64::NEG_INFINITY;
    for k in 0..10 {
        let outer = if k < 5 { invariance_instance(k + 10) } else { mixed_instance(2 * k) };
        let mut d = Draws::new(600 + k);
        let (center, _) = chebyshev_center(&outer.polytope).unwrap();
        let dir = d.direction(outer.n());
        let inner = outer.with_polytope(outer.polytope.with_row(&dir, dir.dot(&center)));
        let lo = bound(&outer, BoundVariant::L);
        let li = bound(&inner, BoundVariant::L);
        monotone = monotone.max((lo - li) / (1.0 + lo.abs()));
    }
    ensure(
        redundant <= 1e-5 && affine <= 1e-5 && monotone <= 1e-6,
        format!(
            "redundant rows {redundant:.2e}, affine maps {affine:.2e}, worst inclusion drop {monotone:.2e}"
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut stqp = 0.0_f64;
    for k in 0..10 {
        let n = 2 + k as usize % 7;
        let inst = generate_instance(&GenSpec::new(GenKind::Stqp, n, 900 + k)).unwrap();
        let conv = stqp_conv_bound(&inst.q, false).unwrap();
        stqp = stqp.max((conv - bound(&inst, BoundVariant::L)).abs());
    }
    let mut srlt = 0.0_f64;
    for k in 0..10 {
        let n = 3 + k as usize % 4;
        let mut s = GenSpec::new(GenKind::BoxQp, n, 950 + k);
        s.params.equalities = Some(k as usize % 3);
        let bq = generate_box_qp(&s);
        let inst = bq.to_instance().unwrap();
        srlt = srlt.max((srlt_bound(&bq).unwrap().value - bound(&inst, BoundVariant::L)).abs());
    }
    ensure(
        stqp <= 1e-5 && srlt <= 1e-5,
        format!("max |conv - L| = {stqp:.2e}, max |SRLT - L| = {srlt:.2e}"),
    )
}

/// Positive root of `a t^2 + b t + c0 = 0` for `a <= 0 <= c0` by the quadratic formula.
fn analytic_root(a: f64, b: f64, c0: f64) -> f64 {
    if a.abs() < 1e-14 {
        return if b < 0.0 { -c0 / b } else { f64::INFINITY };
    }
    (-b - (b * b - 4.0 * a * c0).sqrt()) / (2.0 * a)
}

fn criterion_7() -> Outcome {
    let eps = 1e-4;
    let mut cases = 0;
    let mut cuts = 0;
    let mut konno = 0;
    let mut root_err = 0.0_f64;
    let mut failures = Vec::new();
    let mut seed = 0;
    while cases < 20 {
        seed += 1;
        let n = 2 + seed as usize % 3;
        let inst = if seed % 2 == 0 {
            generate_instance(&spec(GenKind::NormMax, n, 1100 + seed, Some(2 * n))).unwrap()
        } else {
            generate_instance(&spec(GenKind::DenseConcave, n, 1100 + seed, None)).unwrap()
        };
        let p = &inst.polytope;
        let verts = enumerate_vertices(p, DEFAULT_GUARD).unwrap();
        let values: Vec<f64> = verts.iter().map(|v| q(&inst, &v.point)).collect();
        let vmin = values.iter().copied().fold(f64::INFINITY, f64::min);
        let pick = (seed as usize * 7) % verts.len();
        let Some(idx) = (0..verts.len()).map(|i| (pick + i) % verts.len()).find(|&i| !verts[i].is_degenerate())
        else {
            continue;
        };
        let v = &verts[idx];
        let FrameOutcome::Ready(frame) = local_frame(p, v).unwrap() else {
            continue;
        };
        cases += 1;
        let fv = values[idx];
        let u = if cases % 2 == 0 { fv } else { fv - 0.3 * (fv - vmin) };
        let level = u - eps;
        let t = tuy_extension(&inst, &frame, level).unwrap();
        let qd = inst.q_dense();
        let g = &qd * &v.point + &inst.c;
        for (i, d) in frame.directions.iter().enumerate() {
            let exact = analytic_root(d.dot(&(&qd * d)), 2.0 * g.dot(d), fv - level);
            let err = if exact.is_infinite() || t[i].is_infinite() {
                if exact.is_infinite() == t[i].is_infinite() { 0.0 } else { f64::INFINITY }
            } else {
                (t[i] - exact).abs() / exact.abs().max(1.0)
            };
            root_err = root_err.max(err);
        }
        let kr = konno_step(&inst, &frame, &t, u, eps).unwrap();
        if kr.s.iter().zip(&t).any(|(s, t)| s < t) {
            failures.push(format!("case {cases}: konno s < t"));
        }
        if kr.eligible {
            konno += 1;
        }
        let ext = if kr.eligible { &kr.s } else { &t };
        let cut = match make_concavity_cut(p, &frame, ext) {
            Ok(c) => c,
            Err(QpError::VacuousCut) => continue,
            Err(e) => return Err(format!("case {cases}: {e}")),
        };
        cuts += 1;
        if cut.satisfied(&v.point, 1e-9) {
            failures.push(format!("case {cases}: cut does not remove its vertex"));
        }
        let tol = 1e-7 * (1.0 + u.abs());
        for (w, &fw) in verts.iter().zip(&values) {
            if fw < level - tol && !cut.satisfied(&w.point, 1e-7) {
                failures.push(format!("case {cases}: vertex with q = {fw} removed"));
            }
        }
        // Removed region P ∩ {a'x >= b}: its minimum sits at a vertex.
        let removed = p.with_row(&(-&cut.a), -cut.b);
        for w in enumerate_vertices(&removed, DEFAULT_GUARD).unwrap() {
            let fw = q(&inst, &w.point);
            if fw < level - tol {
                failures.push(format!("case {cases}: removed point with q = {fw} < {level}"));
            }
        }
    }
    ensure(
        root_err <= 1e-8 && failures.is_empty(),
        format!(
            "{cases} frames, {cuts} cuts ({konno} Konno), max root err {root_err:.2e}{}",
            if failures.is_empty() { String::new() } else { format!(", {}", failures.join("; ")) }
        ),
    )
}

fn solve_suite() -> Vec<QpInstance> {
    let mut out = Vec::new();
    for k in 0..20 {
        let inst = if k < 10 {
            let n = 4 + k as usize % 5;
            generate_instance(&spec(GenKind::DenseConcave, n, 2000 + k, None)).unwrap()
        } else {
            let n = 3 + k as usize % 3;
            generate_instance(&spec(GenKind::NormMax, n, 2000 + k, Some(2 * n + 2))).unwrap()
        };
        out.push(inst);
    }
    let boxes = [(-1.0, 2.0), (-2.0, 1.0), (0.5, 3.0), (-1.5, 1.5), (-3.0, 0.5)];
    for (k, &(lo, hi)) in boxes.iter().enumerate() {
        let mut s = GenSpec::new(GenKind::NormMax, 2 + k, 2100 + k as u64);
        s.params.box_range = Some((lo, hi));
        out.push(generate_instance(&s).unwrap());
    }
    out
}

fn solve_all(parallel: bool) -> Vec<(BnCResult, f64)> {
    solve_suite()
        .iter()
        .enumerate()
        .map(|(k, inst)| {
            let cfg = BnCConfig {
                eps: 1e-4,
                seed: 31 + k as u64,
                parallel,
                ..Default::default()
            };
            let t = Instant::now();
            let r = solve_bnc(inst, &cfg).unwrap();
            (r, t.elapsed().as_secs_f64())
        })
        .collect()
}

fn criterion_8() -> Outcome {
    let suite = solve_suite();
    let results = solve_all(false);
    let mut failures = Vec::new();
    let mut nodes = 0;
    let mut slowest = 0.0_f64;
    for (inst, (r, secs)) in suite.iter().zip(&results) {
        let opt = brute_force_optimum(inst).unwrap().value;
        nodes += r.nodes_processed;
        slowest = slowest.max(*secs);
        let tag = &inst.name;
        if r.status != BnCStatus::OptimalWithinEps {
            failures.push(format!("{tag}: status {}", r.status));
        }
        if (r.upper - opt).abs() > 1e-4 {
            failures.push(format!("{tag}: upper {} vs optimum {opt}", r.upper));
        }
        if r.lower > opt + 1e-6 * (1.0 + opt.abs()) {
            failures.push(format!("{tag}: lower {} above optimum {opt}", r.lower));
        }
        if !r.lower_history.windows(2).all(|w| w[1] >= w[0]) {
            failures.push(format!("{tag}: lower bound decreased"));
        }
        if !inst.polytope.contains(&r.incumbent, 1e-8 * (1.0 + inst.polytope.b.amax()))
            || (q(inst, &r.incumbent) - r.upper).abs() > 1e-8 * (1.0 + opt.abs())
        {
            failures.push(format!("{tag}: incumbent inconsistent"));
        }
        if *secs >= 60.0 {
            failures.push(format!("{tag}: {secs:.1}s"));
        }
    }
    ensure(
        failures.is_empty(),
        format!(
            "{} instances, {nodes} nodes, slowest {slowest:.2}s{}",
            suite.len(),
            if failures.is_empty() { String::new() } else { format!(", {}", failures.join("; ")) }
        ),
    )
}

fn criterion_9() -> Outcome {
    let a = solve_all(false);
    let b = solve_all(false);
    let c = solve_all(true);
    let same = |x: &BnCResult, y: &BnCResult| {
        x.nodes_processed == y.nodes_processed
            && x.cuts_added == y.cuts_added
            && x.lower.to_bits() == y.lower.to_bits()
            && x.upper.to_bits() == y.upper.to_bits()
            && x.incumbent == y.incumbent
            && x.events == y.events
    };
    let mismatched: Vec<usize> = (0..a.len())
        .filter(|&k| !same(&a[k].0, &b[k].0) || !same(&a[k].0, &c[k].0))
        .collect();
    ensure(
        mismatched.is_empty(),
        format!("{} instances repeated sequentially and in parallel, mismatches {mismatched:?}", a.len()),
    )
}

fn criterion_10() -> Outcome {
    let p = Polytope::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]), DVector::zeros(2)).unwrap();
    let inst = instance(DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]), DVector::zeros(2), p);
    let l = solve_bound(&inst, BoundVariant::L, None).map(|r| r.value);
    let r = solve_relaxation(&inst, false).map(|r| r.value);
    ensure(
        l == Err(QpError::UnboundedPolytope) && r == Err(QpError::UnboundedPolytope),
        format!("bound: {l:?}, relaxation: {r:?}"),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "bilinear example values", criterion_1),
        (2, "strong duality L = DD0", criterion_2),
        (3, "bound validity", criterion_3),
        (4, "exactness properties", criterion_4),
        (5, "invariance suite", criterion_5),
        (6, "StQP and box QP equivalences", criterion_6),
        (7, "cut correctness", criterion_7),
        (8, "global solve", criterion_8),
        (9, "determinism", criterion_9),
        (10, "unboundedness guard", criterion_10),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, f) in criteria {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {id:>2} PASS  {name}: {d} [{secs:.2}s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {d} [{secs:.2}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
