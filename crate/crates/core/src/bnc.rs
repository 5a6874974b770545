//! Branch and cut for concave quadratic minimization over a polytope.
//!
//! Nodes are processed level by level. Within a level every node is bounded
//! against the upper bound from the start of the level, so the bound and
//! descent work of one level is independent and may run in parallel.
//! Incumbent updates, cuts, branching and the lower-bound bookkeeping then run
//! sequentially in node-id order.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::Draws;
use crate::bounds::{extract_underestimator, solve_bound, BoundResult, BoundVariant};
use crate::conic::{solve_convex_qp, SolveStatus};
use crate::cuts::{konno_step, local_frame, make_concavity_cut, tuy_extension, FrameOutcome};
use crate::error::{QpError, Result};
use crate::geometry::{
    chebyshev_center, check_bounded_fulldim, feasible_point, is_empty, local_vertex_descent,
    partition_at, Descent,
};
use crate::linalg::min_eigenvalue;
use crate::model::{Polytope, QpInstance, SymMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct BnCConfig {
    pub eps: f64,
    pub time_limit_sec: f64,
    pub max_nodes: usize,
    pub seed: u64,
    pub bound_variant: BoundVariant,
    pub parallel: bool,
}

impl Default for BnCConfig {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            time_limit_sec: 100.0,
            max_nodes: 100_000,
            seed: 42,
            bound_variant: BoundVariant::L,
            parallel: false,
        }
    }
}

/// A node of the search tree. The polytope is in the coordinates of the
/// root after affine-hull reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct BnCNode {
    pub id: usize,
    pub parent_id: Option<usize>,
    pub polytope: Polytope,
    pub depth: usize,
    pub lower: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnCStatus {
    OptimalWithinEps,
    TimeLimit,
    NodeLimit,
}

impl std::fmt::Display for BnCStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::OptimalWithinEps => "optimal_within_eps",
            Self::TimeLimit => "time_limit",
            Self::NodeLimit => "node_limit",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeAction {
    FathomedGap,
    FathomedEmpty,
    CutAdded,
    Branched,
}

/// One log line. A node that is cut and then branched produces two lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEvent {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    /// Outer iteration the node was processed in.
    pub level: usize,
    pub lower: f64,
    pub upper: f64,
    pub action: NodeAction,
}

#[derive(Debug, Clone)]
pub struct BnCResult {
    pub status: BnCStatus,
    pub lower: f64,
    pub upper: f64,
    pub incumbent: DVector<f64>,
    pub nodes_processed: usize,
    pub cuts_added: usize,
    pub wall_time: f64,
    pub events: Vec<NodeEvent>,
    /// Global lower bound after each outer iteration.
    pub lower_history: Vec<f64>,
}

/// `min` over the bounds of fathomed and open nodes; `-inf` when both are empty.
pub fn update_lower_bound(fathomed: &[f64], open: &[f64]) -> f64 {
    if fathomed.is_empty() && open.is_empty() {
        return f64::NEG_INFINITY;
    }
    fathomed.iter().chain(open).copied().fold(f64::INFINITY, f64::min)
}

struct NodeEval {
    empty: bool,
    bound: Option<f64>,
    descent: Option<Descent>,
}

fn node_bound(inst: &QpInstance, variant: BoundVariant, cap: Option<f64>) -> Result<BoundResult> {
    match solve_bound(inst, variant, cap) {
        // Branch rows are not axis aligned, so BOX only applies at the root.
        Err(QpError::InvalidInput(_)) if variant == BoundVariant::Box => solve_bound(inst, BoundVariant::L, cap),
        r => r,
    }
}

fn underestimator_minimizer(inst: &QpInstance, br: &BoundResult) -> Option<DVector<f64>> {
    let u = extract_underestimator(inst, br).ok()?;
    let p = &inst.polytope;
    let sol = solve_convex_qp(&u.h.to_dense(), &u.g, &p.a, &p.b).ok()?;
    sol.is_optimal().then_some(sol.x)
}

fn evaluate(root: &QpInstance, node: &BnCNode, cap: f64, variant: BoundVariant) -> NodeEval {
    let empty = NodeEval {
        empty: true,
        bound: None,
        descent: None,
    };
    if let Ok(true) = is_empty(&node.polytope) {
        return empty;
    }
    let inst = root.with_polytope(node.polytope.clone());
    let br = match node_bound(&inst, variant, cap.is_finite().then_some(cap)) {
        Err(QpError::EmptyPolytope) => return empty,
        Ok(br) if br.status == SolveStatus::Optimal => Some(br),
        _ => None,
    };
    let start = br
        .as_ref()
        .and_then(|b| underestimator_minimizer(&inst, b))
        .or_else(|| chebyshev_center(&node.polytope).ok().map(|c| c.0))
        .or_else(|| feasible_point(&node.polytope).ok());
    let descent = start.and_then(|x| local_vertex_descent(&inst, &x).ok());
    NodeEval {
        empty: false,
        bound: br.map(|b| b.value),
        descent,
    }
}

/// Tries to cut at the descent vertex; returns the cut polytope when the
/// vertex is nondegenerate and eligible.
fn try_cut(inst: &QpInstance, descent: &Descent, upper: f64, eps: f64) -> Option<Polytope> {
    if descent.degenerate {
        return None;
    }
    let p = &inst.polytope;
    let frame = match local_frame(p, &descent.vertex).ok()? {
        FrameOutcome::Ready(f) => f,
        FrameOutcome::Degenerate => return None,
    };
    let t = tuy_extension(inst, &frame, upper - eps).ok()?;
    let k = konno_step(inst, &frame, &t, upper, eps).ok()?;
    if !k.eligible {
        return None;
    }
    let cut = make_concavity_cut(p, &frame, &k.s).ok()?;
    Some(p.with_row(&cut.a, cut.b))
}

fn branch_point(p: &Polytope) -> Option<DVector<f64>> {
    match chebyshev_center(p) {
        Ok((x, _)) => Some(x),
        Err(QpError::LowerDimensional) => feasible_point(p).ok(),
        Err(_) => None,
    }
}

pub fn solve_bnc(inst: &QpInstance, cfg: &BnCConfig) -> Result<BnCResult> {
    let start = Instant::now();
    if !(cfg.eps > 0.0) || !(cfg.time_limit_sec > 0.0) || cfg.max_nodes == 0 {
        return Err(QpError::InvalidInput("eps, time limit and node limit must be positive".into()));
    }
    let qd = inst.q_dense();
    let lmax = -min_eigenvalue(&(-&qd));
    if lmax > 1e-9 * (1.0 + qd.amax()) {
        return Err(QpError::NotConcave(lmax));
    }
    let report = check_bounded_fulldim(&inst.polytope)?;
    if !report.bounded {
        return Err(QpError::UnboundedPolytope);
    }
    let reduced = report.reduced;
    let (qr, cr, offset) = reduced.reduce_objective(&qd, &inst.c);
    let elapsed = || start.elapsed().as_secs_f64();

    if reduced.dim() == 0 {
        let x = reduced.origin.clone();
        return Ok(BnCResult {
            status: BnCStatus::OptimalWithinEps,
            lower: offset,
            upper: offset,
            incumbent: x,
            nodes_processed: 1,
            cuts_added: 0,
            wall_time: elapsed(),
            events: vec![NodeEvent {
                id: 0,
                parent: None,
                depth: 0,
                level: 0,
                lower: offset,
                upper: offset,
                action: NodeAction::FathomedGap,
            }],
            lower_history: vec![offset],
        });
    }

    let root = QpInstance::new(
        inst.name.clone(),
        SymMatrix::from_symmetric_part(&qr),
        cr,
        reduced.inner.clone(),
    )?;
    let n = root.n();
    let eps = cfg.eps;

    // Initial incumbent from a root vertex.
    let x0 = branch_point(&root.polytope).ok_or(QpError::EmptyPolytope)?;
    let d0 = local_vertex_descent(&root, &x0)?;
    let mut upper = d0.value;
    let mut incumbent = d0.vertex.point;

    let mut fathomed: Vec<f64> = Vec::new();
    let mut queue = vec![BnCNode {
        id: 0,
        parent_id: None,
        polytope: root.polytope.clone(),
        depth: 0,
        lower: f64::NEG_INFINITY,
    }];
    let mut next_id = 1;
    let mut processed = 0;
    let mut cuts = 0;
    let mut events = Vec::new();
    let mut lower_history = Vec::new();
    let mut lower = f64::NEG_INFINITY;
    let mut status = BnCStatus::OptimalWithinEps;

    for level in 0.. {
        if queue.is_empty() {
            break;
        }
        if elapsed() >= cfg.time_limit_sec {
            status = BnCStatus::TimeLimit;
            break;
        }
        let budget = cfg.max_nodes - processed;
        if budget == 0 {
            status = BnCStatus::NodeLimit;
            break;
        }
        let take = budget.min(queue.len());
        let cap = upper;
        let eval = |node: &BnCNode| {
            (elapsed() < cfg.time_limit_sec).then(|| evaluate(&root, node, cap, cfg.bound_variant))
        };
        let evals: Vec<Option<NodeEval>> = if cfg.parallel {
            queue[..take].par_iter().map(eval).collect()
        } else {
            queue[..take].iter().map(eval).collect()
        };

        let mut next: Vec<BnCNode> = Vec::new();
        let mut timed_out = false;
        let mut rest = queue.split_off(take);
        for (node, ev) in queue.into_iter().zip(evals) {
            let Some(ev) = ev else {
                timed_out = true;
                next.push(node);
                continue;
            };
            processed += 1;
            let mut log = |lower: f64, upper: f64, action| {
                events.push(NodeEvent {
                    id: node.id,
                    parent: node.parent_id,
                    depth: node.depth,
                    level,
                    lower: lower + offset,
                    upper: upper + offset,
                    action,
                })
            };
            if ev.empty {
                log(f64::INFINITY, upper, NodeAction::FathomedEmpty);
                continue;
            }
            let lk = ev.bound.map_or(node.lower, |b| b.max(node.lower));
            if let Some(d) = &ev.descent {
                if d.value < upper {
                    upper = d.value;
                    incumbent = d.vertex.point.clone();
                }
            }
            if lk + eps >= upper {
                fathomed.push(lk);
                log(lk, upper, NodeAction::FathomedGap);
                continue;
            }
            let mut poly = node.polytope.clone();
            if let Some(d) = &ev.descent {
                let node_inst = root.with_polytope(poly.clone());
                if let Some(cut) = try_cut(&node_inst, d, upper, eps) {
                    poly = cut;
                    cuts += 1;
                    // The removed region has q >= u - eps.
                    fathomed.push(lk.max(upper - eps));
                    log(lk, upper, NodeAction::CutAdded);
                    if let Ok(true) = is_empty(&poly) {
                        log(lk, upper, NodeAction::FathomedEmpty);
                        continue;
                    }
                }
            }
            let Some(center) = branch_point(&poly) else {
                log(lk, upper, NodeAction::FathomedEmpty);
                continue;
            };
            let dir = Draws::with_stream(cfg.seed, node.id as u64).direction(n);
            let (p1, p2) = partition_at(&poly, &center, &dir)?;
            for p in [p1, p2] {
                next.push(BnCNode {
                    id: next_id,
                    parent_id: Some(node.id),
                    polytope: p,
                    depth: node.depth + 1,
                    lower: lk,
                });
                next_id += 1;
            }
            log(lk, upper, NodeAction::Branched);
        }
        next.append(&mut rest);
        next.sort_by_key(|nd| nd.id);
        queue = next;

        let open: Vec<f64> = queue.iter().map(|nd| nd.lower).collect();
        lower = update_lower_bound(&fathomed, &open);
        lower_history.push(lower + offset);
        if timed_out {
            status = BnCStatus::TimeLimit;
            break;
        }
        if queue.is_empty() || upper - lower <= eps {
            queue.clear();
            break;
        }
    }
    if status == BnCStatus::OptimalWithinEps && !queue.is_empty() {
        status = BnCStatus::NodeLimit;
    }
    if status != BnCStatus::OptimalWithinEps {
        let open: Vec<f64> = queue.iter().map(|nd| nd.lower).collect();
        lower = update_lower_bound(&fathomed, &open);
    }

    Ok(BnCResult {
        status,
        lower: lower + offset,
        upper: upper + offset,
        incumbent: reduced.to_original(&incumbent),
        nodes_processed: processed,
        cuts_added: cuts,
        wall_time: elapsed(),
        events,
        lower_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn concave_box(diag: &[f64], lo: &[f64], hi: &[f64]) -> QpInstance {
        let n = diag.len();
        QpInstance::new(
            "t",
            SymMatrix::from_dense(&DMatrix::from_diagonal(&DVector::from_row_slice(diag)), 0.0).unwrap(),
            DVector::zeros(n),
            Polytope::boxed(lo, hi),
        )
        .unwrap()
    }

    #[test]
    fn lower_bound_update() {
        assert_eq!(update_lower_bound(&[-5.0], &[-3.0, -4.0]), -5.0);
        assert_eq!(update_lower_bound(&[], &[-2.0]), -2.0);
        assert_eq!(update_lower_bound(&[], &[]), f64::NEG_INFINITY);
    }

    #[test]
    fn norm_max_on_box() {
        let inst = concave_box(&[-1.0, -1.0], &[-1.0, -1.0], &[2.0, 2.0]);
        let r = solve_bnc(&inst, &BnCConfig::default()).unwrap();
        assert_eq!(r.status, BnCStatus::OptimalWithinEps);
        assert!((r.upper + 8.0).abs() < 1e-6);
        assert!(r.upper - r.lower <= 1e-4 + 1e-9);
        assert!((r.incumbent[0] - 2.0).abs() < 1e-6 && (r.incumbent[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn exact_root_bound_needs_one_node() {
        let inst = concave_box(&[-1.0], &[0.0], &[1.0]);
        let r = solve_bnc(&inst, &BnCConfig::default()).unwrap();
        assert_eq!(r.nodes_processed, 1);
        assert!((r.upper + 1.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_convex_objective() {
        let inst = concave_box(&[1.0, -1.0], &[0.0, 0.0], &[1.0, 1.0]);
        assert!(matches!(solve_bnc(&inst, &BnCConfig::default()), Err(QpError::NotConcave(_))));
    }
}
