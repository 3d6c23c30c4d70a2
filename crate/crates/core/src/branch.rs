//! Input-space branch-and-bound.
//!
//! The root box is split breadth-first at widest-dimension midpoints into at
//! most `max_branches` leaves. Each leaf gets its own tightening run (warm
//! started from the root's tightened store) and contributes its certified
//! polytope to the union; leaves proven infeasible contribute nothing. The
//! union of the leaf polytopes over-approximates the preimage restricted to
//! the root box.

use crate::bounds::{interval_propagate, rsip_init, BoundStore};
use crate::dual::{bound_halfspaces_with_floor, HalfSpaceRun, TightenConfig, TightenReport};
use crate::error::{Error, Result};
use crate::geometry::{HalfSpace, PolytopeUnion};
use crate::network::{InputBox, Network, OutputSet};
use crate::scalar::Scalar;
use ndarray::Array1;
use rayon::prelude::*;
use std::collections::VecDeque;

/// Margin demanded of the interval pruning proof; a constraint row must be
/// violated by more than this over the whole leaf before we discard it.
const PRUNE_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeStatus {
    Pending,
    Done,
    PrunedInfeasible,
}

/// One leaf region and its certification outcome.
#[derive(Debug, Clone)]
pub struct BranchNode<F> {
    pub bx: InputBox<F>,
    pub status: NodeStatus,
    pub halfspaces: Option<Vec<HalfSpace<F>>>,
    pub depth: usize,
}

/// Split a box at `s` along `dim`; `s` must lie strictly inside.
pub fn split<F: Scalar>(
    bx: &InputBox<F>,
    dim: usize,
    s: F,
) -> Result<(InputBox<F>, InputBox<F>)> {
    if dim >= bx.dim() {
        return Err(Error::invalid(format!("split dimension {dim} out of range")));
    }
    if !(bx.lo[dim] < s && s < bx.hi[dim]) {
        return Err(Error::invalid(format!(
            "split point {s} not strictly inside [{}, {}]",
            bx.lo[dim], bx.hi[dim]
        )));
    }
    let mut lo_half = bx.clone();
    lo_half.hi[dim] = s;
    let mut hi_half = bx.clone();
    hi_half.lo[dim] = s;
    Ok((lo_half, hi_half))
}

/// Breadth-first widest-dimension midpoint partition into at most
/// `max_branches` leaves (fewer only if boxes degenerate to points).
pub fn partition<F: Scalar>(root: &InputBox<F>, max_branches: usize) -> Vec<(InputBox<F>, usize)> {
    let mut queue: VecDeque<(InputBox<F>, usize)> = VecDeque::new();
    queue.push_back((root.clone(), 0));
    let mut done: Vec<(InputBox<F>, usize)> = Vec::new();
    while done.len() + queue.len() < max_branches {
        let Some((bx, depth)) = queue.pop_front() else {
            break;
        };
        let dim = bx.widest_dim();
        let mid = (bx.lo[dim] + bx.hi[dim]) / F::of(2.0);
        match split(&bx, dim, mid) {
            Ok((a, b)) => {
                queue.push_back((a, depth + 1));
                queue.push_back((b, depth + 1));
            }
            Err(_) => done.push((bx, depth)), // zero-width box, cannot split
        }
    }
    done.extend(queue);
    // Deterministic output ordering by leaf box lexicographic order.
    done.sort_by(|(a, _), (b, _)| {
        for j in 0..a.dim() {
            match a.lo[j].partial_cmp(&b.lo[j]).unwrap() {
                std::cmp::Ordering::Equal => continue,
                ord => return ord,
            }
        }
        std::cmp::Ordering::Equal
    });
    done
}

/// Can interval propagation alone prove the leaf cannot reach the output
/// set? True when some folded constraint row stays strictly positive.
fn interval_prunes<F: Scalar>(folded: &Network<F>, bx: &InputBox<F>) -> Result<bool> {
    let store = interval_propagate(folded, bx)?;
    let lo = store.out_lo.expect("interval propagation fills outputs");
    Ok(lo.iter().any(|&v| v > F::of(PRUNE_MARGIN)))
}

/// Result of [`branch_and_bound`].
#[derive(Debug)]
pub struct BranchOutcome<F> {
    pub union: PolytopeUnion<F>,
    pub leaves: Vec<BranchNode<F>>,
    /// Tightening report per leaf (None when interval-pruned before any run).
    pub reports: Vec<Option<TightenReport<F>>>,
    /// The root's own report when a pre-branching root run happened.
    pub root_report: Option<TightenReport<F>>,
}

impl<F: Scalar> BranchOutcome<F> {
    pub fn all_pruned(&self) -> bool {
        self.leaves
            .iter()
            .all(|l| l.status == NodeStatus::PrunedInfeasible)
    }
}

/// Split the root box, run the tightening engine per leaf, prune infeasible
/// regions, and union the per-leaf polytopes.
pub fn branch_and_bound<F: Scalar>(
    net: &Network<F>,
    out_set: &OutputSet<F>,
    root: &InputBox<F>,
    directions: &[Array1<F>],
    config: &TightenConfig,
    max_branches: usize,
) -> Result<BranchOutcome<F>> {
    if max_branches < 1 {
        return Err(Error::invalid("max_branches must be at least 1"));
    }
    let folded = net.fold_output_constraints(out_set)?;

    // Root pass: initialize, maybe prune, and (when branching) tighten once
    // to warm-start every leaf.
    let mut root_store = interval_propagate(net, root)?;
    rsip_init(net, &mut root_store);

    if interval_prunes(&folded, root)? {
        let node = BranchNode {
            bx: root.clone(),
            status: NodeStatus::PrunedInfeasible,
            halfspaces: None,
            depth: 0,
        };
        return Ok(BranchOutcome {
            union: PolytopeUnion { leaves: vec![] },
            leaves: vec![node],
            reports: vec![None],
            root_report: None,
        });
    }

    if max_branches == 1 {
        let run = bound_halfspaces_with_floor(net, &mut root_store, out_set, directions, None, config)?;
        return Ok(finish_single(root, root_store, run));
    }

    let root_run =
        bound_halfspaces_with_floor(net, &mut root_store, out_set, directions, None, config)?;
    if root_store.infeasible() {
        let node = BranchNode {
            bx: root.clone(),
            status: NodeStatus::PrunedInfeasible,
            halfspaces: None,
            depth: 0,
        };
        return Ok(BranchOutcome {
            union: PolytopeUnion { leaves: vec![] },
            leaves: vec![node],
            reports: vec![Some(root_run.report)],
            root_report: None,
        });
    }
    let root_floor: Vec<F> = root_run.halfspaces.iter().map(|h| h.lb).collect();

    let leaves = partition(root, max_branches);
    let results: Vec<Result<(BranchNode<F>, Option<TightenReport<F>>, Vec<HalfSpace<F>>)>> =
        leaves
            .par_iter()
            .map(|(bx, depth)| {
                if interval_prunes(&folded, bx)? {
                    return Ok((
                        BranchNode {
                            bx: bx.clone(),
                            status: NodeStatus::PrunedInfeasible,
                            halfspaces: None,
                            depth: *depth,
                        },
                        None,
                        Vec::new(),
                    ));
                }
                let mut store = interval_propagate(net, bx)?;
                rsip_init(net, &mut store);
                store.intersect(&root_store)?;
                // Re-pin the leaf's own box: the root store's input bounds
                // may be wider in split dimensions but tighter in others;
                // intersect() already kept the tighter side per dimension.
                if store.infeasible() {
                    return Ok((
                        BranchNode {
                            bx: bx.clone(),
                            status: NodeStatus::PrunedInfeasible,
                            halfspaces: None,
                            depth: *depth,
                        },
                        None,
                        Vec::new(),
                    ));
                }
                let run = bound_halfspaces_with_floor(
                    net,
                    &mut store,
                    out_set,
                    directions,
                    Some(&root_floor),
                    config,
                )?;
                if store.infeasible() {
                    return Ok((
                        BranchNode {
                            bx: bx.clone(),
                            status: NodeStatus::PrunedInfeasible,
                            halfspaces: None,
                            depth: *depth,
                        },
                        Some(run.report),
                        Vec::new(),
                    ));
                }
                Ok((
                    BranchNode {
                        bx: bx.clone(),
                        status: NodeStatus::Done,
                        halfspaces: Some(run.halfspaces.clone()),
                        depth: *depth,
                    },
                    Some(run.report),
                    run.halfspaces,
                ))
            })
            .collect();

    let mut nodes = Vec::new();
    let mut reports = Vec::new();
    let mut union_leaves = Vec::new();
    for r in results {
        let (node, report, halfspaces) = r?;
        if node.status == NodeStatus::Done {
            union_leaves.push((node.bx.clone(), halfspaces));
        }
        nodes.push(node);
        reports.push(report);
    }
    Ok(BranchOutcome {
        union: PolytopeUnion {
            leaves: union_leaves,
        },
        leaves: nodes,
        reports,
        root_report: Some(root_run.report),
    })
}

fn finish_single<F: Scalar>(
    root: &InputBox<F>,
    store: BoundStore<F>,
    run: HalfSpaceRun<F>,
) -> BranchOutcome<F> {
    if store.infeasible() {
        let node = BranchNode {
            bx: root.clone(),
            status: NodeStatus::PrunedInfeasible,
            halfspaces: None,
            depth: 0,
        };
        return BranchOutcome {
            union: PolytopeUnion { leaves: vec![] },
            leaves: vec![node],
            reports: vec![Some(run.report)],
            root_report: None,
        };
    }
    let node = BranchNode {
        bx: root.clone(),
        status: NodeStatus::Done,
        halfspaces: Some(run.halfspaces.clone()),
        depth: 0,
    };
    BranchOutcome {
        union: PolytopeUnion::single(root.clone(), run.halfspaces),
        leaves: vec![node],
        reports: vec![Some(run.report)],
        root_report: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::approx_ratio;
    use crate::geometry::RatioEstimate;
    use crate::network::AffineLayer;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2};

    #[test]
    fn split_basic_and_errors() {
        let bx = InputBox::new(arr1(&[0.0, 0.0]), arr1(&[4.0, 2.0])).unwrap();
        let (a, b) = split(&bx, 0, 2.0).unwrap();
        assert_eq!(a.lo, arr1(&[0.0, 0.0]));
        assert_eq!(a.hi, arr1(&[2.0, 2.0]));
        assert_eq!(b.lo, arr1(&[2.0, 0.0]));
        assert_eq!(b.hi, arr1(&[4.0, 2.0]));
        assert!(split(&bx, 0, 4.0).is_err());
        assert!(split(&bx, 0, -1.0).is_err());
    }

    #[test]
    fn partition_square_into_quadrants() {
        let bx = InputBox::new(arr1(&[-1.0, -1.0]), arr1(&[1.0, 1.0])).unwrap();
        let leaves = partition(&bx, 4);
        assert_eq!(leaves.len(), 4);
        // Every quadrant present, all at depth 2, tiling the box.
        let mut area = 0.0;
        for (leaf, depth) in &leaves {
            assert_eq!(*depth, 2);
            area += (leaf.hi[0] - leaf.lo[0]) * (leaf.hi[1] - leaf.lo[1]);
        }
        assert_abs_diff_eq!(area, 4.0, epsilon = 1e-12);
        for (x, y) in [(-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)] {
            assert!(
                leaves
                    .iter()
                    .any(|(l, _)| l.contains(&arr1(&[x, y]), 0.0)),
                "quadrant containing ({x},{y}) missing"
            );
        }
        // Lexicographic ordering of lo corners.
        for w in leaves.windows(2) {
            let (a, b) = (&w[0].0, &w[1].0);
            assert!(a.lo[0] < b.lo[0] || (a.lo[0] == b.lo[0] && a.lo[1] <= b.lo[1]));
        }
    }

    fn toy_2d() -> (Network<f64>, OutputSet<f64>, InputBox<f64>) {
        // Identity-plus-ReLU network on 2 inputs with a diagonal read-out;
        // the preimage of y₀ ≤ 0.6 within the box is nonconvex enough to
        // reward branching a little, and small enough to be fast.
        let net = Network::new(vec![
            AffineLayer::new(arr2(&[[1.0, 0.4], [-0.3, 1.0]]), arr1(&[0.1, -0.1])).unwrap(),
            AffineLayer::new(arr2(&[[1.0, 0.6]]), arr1(&[-0.2])).unwrap(),
        ])
        .unwrap();
        let out = OutputSet::new(arr2(&[[1.0]]), arr1(&[-0.6])).unwrap();
        let bx = InputBox::new(arr1(&[-1.0, -1.0]), arr1(&[1.0, 1.0])).unwrap();
        (net, out, bx)
    }

    #[test]
    fn single_branch_equals_unbranched_run() {
        let (net, out, bx) = toy_2d();
        let dirs = crate::geometry::gen_directions_2d::<f64>(8).unwrap();
        let config = TightenConfig {
            max_sweeps: 6,
            ..TightenConfig::default()
        };
        let outcome = branch_and_bound(&net, &out, &bx, &dirs, &config, 1).unwrap();
        assert_eq!(outcome.leaves.len(), 1);
        assert_eq!(outcome.leaves[0].status, NodeStatus::Done);

        let mut store = interval_propagate(&net, &bx).unwrap();
        rsip_init(&net, &mut store);
        let run =
            crate::dual::bound_halfspaces(&net, &mut store, &out, &dirs, &config).unwrap();
        let from_branch = outcome.leaves[0].halfspaces.as_ref().unwrap();
        for (a, b) in run.halfspaces.iter().zip(from_branch.iter()) {
            assert_abs_diff_eq!(a.lb, b.lb, epsilon = 1e-12);
        }
    }

    #[test]
    fn branching_never_loosens_the_estimate() {
        let (net, out, bx) = toy_2d();
        let dirs = crate::geometry::gen_directions_2d::<f64>(8).unwrap();
        let config = TightenConfig {
            max_sweeps: 6,
            ..TightenConfig::default()
        };
        let one = branch_and_bound(&net, &out, &bx, &dirs, &config, 1).unwrap();
        let four = branch_and_bound(&net, &out, &bx, &dirs, &config, 4).unwrap();
        let n = 200_000;
        let (r1, v1) = approx_ratio(&one.union, &net, &out, &bx, n, 77).unwrap();
        let (r4, v4) = approx_ratio(&four.union, &net, &out, &bx, n, 77).unwrap();
        assert_eq!(v1, 0);
        assert_eq!(v4, 0);
        let (RatioEstimate::Ratio { ratio: ratio1, .. }, RatioEstimate::Ratio { ratio: ratio4, .. }) =
            (r1, r4)
        else {
            panic!("nonempty preimage expected");
        };
        assert!(
            ratio4 <= ratio1 + 1e-6,
            "branching loosened: {ratio4} > {ratio1}"
        );
    }

    #[test]
    fn unreachable_quadrant_is_pruned() {
        // Identity network; demand y₀ ≤ −0.5. The x₀ ≥ 0 half violates the
        // row by ≥ 0.5 under plain interval propagation.
        let net = Network::new(vec![AffineLayer::identity(2)]).unwrap();
        let out = OutputSet::new(arr2(&[[1.0, 0.0]]), arr1(&[0.5])).unwrap();
        let bx = InputBox::new(arr1(&[-2.0, -2.0]), arr1(&[2.0, 2.0])).unwrap();
        let dirs = crate::geometry::gen_directions_box::<f64>(2).unwrap();
        let config = TightenConfig {
            max_sweeps: 3,
            ..TightenConfig::default()
        };
        let outcome = branch_and_bound(&net, &out, &bx, &dirs, &config, 4).unwrap();
        let pruned: Vec<_> = outcome
            .leaves
            .iter()
            .filter(|l| l.status == NodeStatus::PrunedInfeasible)
            .collect();
        assert_eq!(pruned.len(), 2, "right-half quadrants must be pruned");
        for p in pruned {
            assert!(p.bx.lo[0] >= 0.0);
        }
        // Union covers only feasible samples.
        let (_, violations) = approx_ratio(&outcome.union, &net, &out, &bx, 50_000, 3).unwrap();
        assert_eq!(violations, 0);
    }

    #[test]
    fn unsatisfiable_out_set_prunes_root() {
        let net = Network::new(vec![AffineLayer::identity(1)]).unwrap();
        // 0·y + 1 ≤ 0 is unsatisfiable everywhere.
        let out = OutputSet::new(arr2(&[[0.0]]), arr1(&[1.0])).unwrap();
        let bx = InputBox::new(arr1(&[-1.0]), arr1(&[1.0])).unwrap();
        let dirs = crate::geometry::gen_directions_box::<f64>(1).unwrap();
        let outcome =
            branch_and_bound(&net, &out, &bx, &dirs, &TightenConfig::default(), 1).unwrap();
        assert!(outcome.all_pruned());
        assert!(outcome.union.leaves.is_empty());
    }

    #[test]
    fn leaf_boxes_tile_the_root() {
        let bx = InputBox::new(arr1(&[0.0, 0.0, 0.0]), arr1(&[8.0, 4.0, 2.0])).unwrap();
        for n in [1usize, 2, 3, 5, 8, 13] {
            let leaves = partition(&bx, n);
            assert_eq!(leaves.len(), n);
            let vol: f64 = leaves
                .iter()
                .map(|(l, _)| (0..3).map(|j| l.hi[j] - l.lo[j]).product::<f64>())
                .sum();
            assert_abs_diff_eq!(vol, 64.0, epsilon = 1e-9);
        }
    }
}
