//! Best-first branch-and-bound over binary columns.
//!
//! Nodes are evaluated eagerly: a node's LP relaxation is solved when the
//! node is created, and the heap orders nodes by that bound (ascending),
//! breaking ties toward deeper and more recently created nodes so the search
//! dives when bounds agree. Branching picks the most fractional binary
//! (closest to one half), ties toward the lowest column index. Everything is
//! deterministic: the same problem yields the same node count, iteration
//! count, and incumbent trace on every run.

use super::simplex::{self, LpOutcome, SimplexOptions};
use super::{MilpOptions, MilpProblem, MilpSolution, SolveStats, SolveStatus};
use crate::error::{Error, Result};
use std::collections::BinaryHeap;

/// A node may only enter the heap if its bound improves on the incumbent by
/// more than this margin.
const PRUNE_EPS: f64 = 1e-9;

struct Node {
    /// Objective of this node's LP relaxation (a lower bound for its subtree).
    bound: f64,
    depth: u32,
    /// Creation sequence number; later nodes win ties.
    seq: u64,
    /// `(binary list position, value)` fixes accumulated along the path.
    fixes: Vec<(usize, u8)>,
    /// Position (in the binary list) of the most fractional binary, if any.
    branch_pos: Option<usize>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.depth == other.depth && self.seq == other.seq
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // BinaryHeap pops the maximum; "greater" must mean "preferred":
        // smaller bound, then greater depth, then greater sequence number.
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(self.seq.cmp(&other.seq))
    }
}

/// Applies `fixes` on top of the root relaxation bounds for the binary
/// columns; all other binaries are reset to [0, 1].
fn apply_fixes(
    lp: &mut super::LpProblem,
    binaries: &[usize],
    root_lower: &[f64],
    root_upper: &[f64],
    fixes: &[(usize, u8)],
) {
    for &b in binaries {
        lp.lower[b] = root_lower[b];
        lp.upper[b] = root_upper[b];
    }
    for &(pos, v) in fixes {
        let col = binaries[pos];
        lp.lower[col] = v as f64;
        lp.upper[col] = v as f64;
    }
}

/// Most fractional binary (value nearest one half); `None` when every binary
/// is within `int_tol` of an integer.
fn most_fractional(x: &[f64], binaries: &[usize], int_tol: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None; // (list position, |frac - 0.5|)
    for (pos, &col) in binaries.iter().enumerate() {
        let v = x[col];
        let frac = v - v.floor();
        let dist_int = frac.min(1.0 - frac);
        if dist_int <= int_tol {
            continue;
        }
        let score = (frac - 0.5).abs();
        match best {
            Some((_, s)) if score >= s => {}
            _ => best = Some((pos, score)),
        }
    }
    best.map(|(pos, _)| pos)
}

pub(crate) fn solve(problem: &MilpProblem, options: &MilpOptions) -> Result<MilpSolution> {
    let binaries = &problem.binaries;
    let mut lp = problem.relaxed();
    let root_lower = lp.lower.clone();
    let root_upper = lp.upper.clone();
    let simplex_opts = SimplexOptions::default();

    let mut stats = SolveStats::default();
    let mut heap: BinaryHeap<Node> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut incumbent: Option<(f64, Vec<f64>)> = None;

    // Evaluates the relaxation under `fixes`; returns the node when it is
    // feasible and bounded, updating the incumbent on integral solutions.
    // Unbounded relaxations are only possible at the root (children restrict
    // the root's feasible set).
    macro_rules! evaluate {
        ($fixes:expr, $depth:expr) => {{
            if stats.nodes >= options.node_budget {
                let gap = heap
                    .peek()
                    .map(|n| n.bound)
                    .and_then(|b| incumbent.as_ref().map(|(obj, _)| obj - b));
                return Err(Error::NodeBudgetExceeded {
                    budget: options.node_budget,
                    incumbent: incumbent.as_ref().map(|(obj, _)| *obj),
                    gap,
                });
            }
            stats.nodes += 1;
            let fixes: Vec<(usize, u8)> = $fixes;
            apply_fixes(&mut lp, binaries, &root_lower, &root_upper, &fixes);
            let outcome =
                simplex::solve_active_set(&lp, &simplex_opts, &mut stats.lp_iterations)?;
            match outcome {
                LpOutcome::Infeasible => None,
                LpOutcome::Unbounded { .. } => {
                    if $depth == 0 {
                        return Ok(MilpSolution::unbounded(stats));
                    }
                    return Err(Error::NumericalFailure(
                        "child relaxation unbounded although the root was bounded".into(),
                    ));
                }
                LpOutcome::Optimal(sol) => {
                    let branch_pos = most_fractional(&sol.x, binaries, options.int_tol);
                    if branch_pos.is_none() {
                        // Integral: polish by re-solving with every binary
                        // pinned to its rounded value, so the reported
                        // objective is exact for this assignment.
                        let rounded: Vec<(usize, u8)> = binaries
                            .iter()
                            .enumerate()
                            .map(|(pos, &col)| (pos, sol.x[col].round() as u8))
                            .collect();
                        apply_fixes(&mut lp, binaries, &root_lower, &root_upper, &rounded);
                        let polished = simplex::solve_active_set(
                            &lp,
                            &simplex_opts,
                            &mut stats.lp_iterations,
                        )?;
                        let (obj, x) = match polished {
                            LpOutcome::Optimal(p) => (p.objective, p.x),
                            // Numerically the pinned problem can fall just
                            // outside feasibility; keep the relaxation point.
                            _ => (sol.objective, sol.x.clone()),
                        };
                        let improves = match &incumbent {
                            None => true,
                            Some((best, _)) => obj < best - PRUNE_EPS,
                        };
                        if improves {
                            stats.incumbent_trace.push(obj);
                            incumbent = Some((obj, x));
                        }
                        None
                    } else {
                        seq += 1;
                        Some(Node {
                            bound: sol.objective,
                            depth: $depth,
                            seq,
                            fixes,
                            branch_pos,
                        })
                    }
                }
            }
        }};
    }

    if let Some(root) = evaluate!(Vec::new(), 0u32) {
        heap.push(root);
    }

    while let Some(node) = heap.pop() {
        if let Some((best, _)) = &incumbent {
            // Best-first order: once the best bound is within the gap
            // tolerance of the incumbent, every remaining node is too.
            if node.bound >= best - options.gap_tol {
                break;
            }
        }
        let pos = node
            .branch_pos
            .expect("fractional nodes always carry a branching column");
        debug_assert!(!node.fixes.iter().any(|&(p, _)| p == pos));
        for value in [0u8, 1u8] {
            let mut fixes = node.fixes.clone();
            fixes.push((pos, value));
            if let Some(child) = evaluate!(fixes, node.depth + 1) {
                let worth_keeping = match &incumbent {
                    None => true,
                    Some((best, _)) => child.bound < best - PRUNE_EPS,
                };
                if worth_keeping {
                    heap.push(child);
                }
            }
        }
    }

    Ok(match incumbent {
        Some((objective, values)) => MilpSolution {
            status: SolveStatus::Optimal,
            values,
            objective,
            stats,
        },
        None => MilpSolution::infeasible(stats),
    })
}

#[cfg(test)]
mod tests {
    use super::super::{LpProblem, MilpOptions, MilpProblem, Relation, SolveStatus};
    use super::*;

    /// Small knapsack-style problem: min -(8 z0 + 11 z1 + 6 z2 + 4 z3) with
    /// 5 z0 + 7 z1 + 4 z2 + 3 z3 <= 14. Optimal picks {z0, z1} or {z1, z2,
    /// z3}: both weigh <= 14; values 19 vs 21, so the optimum is -21.
    fn knapsack() -> MilpProblem {
        let mut lp = LpProblem::new(4);
        lp.objective = vec![-8.0, -11.0, -6.0, -4.0];
        for j in 0..4 {
            lp.set_bounds(j, 0.0, 1.0);
        }
        lp.add_row(
            vec![(0, 5.0), (1, 7.0), (2, 4.0), (3, 3.0)],
            Relation::Le,
            14.0,
        );
        MilpProblem {
            base: lp,
            binaries: vec![0, 1, 2, 3],
        }
    }

    #[test]
    fn knapsack_reaches_enumerated_optimum() {
        let p = knapsack();
        let sol = solve(&p, &MilpOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective + 21.0).abs() < 1e-9, "got {}", sol.objective);
        // z1, z2, z3 selected; z0 not.
        assert!(sol.values[0] < 0.5);
        assert!(sol.values[1] > 0.5 && sol.values[2] > 0.5 && sol.values[3] > 0.5);
    }

    #[test]
    fn incumbent_trace_is_monotone_decreasing() {
        let p = knapsack();
        let sol = solve(&p, &MilpOptions::default()).unwrap();
        for w in sol.stats.incumbent_trace.windows(2) {
            assert!(w[1] < w[0], "trace must strictly improve: {w:?}");
        }
        assert_eq!(
            *sol.stats.incumbent_trace.last().unwrap(),
            sol.objective,
            "last trace entry is the final objective"
        );
    }

    #[test]
    fn node_budget_violation_carries_incumbent() {
        let p = knapsack();
        let tiny = MilpOptions {
            node_budget: 2,
            ..MilpOptions::default()
        };
        match solve(&p, &tiny) {
            Err(Error::NodeBudgetExceeded { budget, .. }) => assert_eq!(budget, 2),
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn branching_prefers_most_fractional_then_lowest_index() {
        let x = vec![0.5, 0.4, 0.5, 1.0 - 1e-9];
        // Positions 0 and 2 are at exactly one half; the tie goes to 0.
        assert_eq!(most_fractional(&x, &[0, 1, 2, 3], 1e-6), Some(0));
        // With column 0 integral, position 2 beats 1 (0.5 vs 0.4).
        let x = vec![1.0, 0.4, 0.5, 1.0];
        assert_eq!(most_fractional(&x, &[0, 1, 2, 3], 1e-6), Some(2));
        // All integral.
        let x = vec![0.0, 1.0, 1.0, 0.0];
        assert_eq!(most_fractional(&x, &[0, 1, 2, 3], 1e-6), None);
    }

    #[test]
    fn heap_order_prefers_lower_bound_then_depth_then_recency() {
        let mk = |bound, depth, seq| Node {
            bound,
            depth,
            seq,
            fixes: Vec::new(),
            branch_pos: Some(0),
        };
        let mut heap = std::collections::BinaryHeap::new();
        heap.push(mk(5.0, 0, 1));
        heap.push(mk(3.0, 0, 2));
        heap.push(mk(3.0, 2, 3));
        heap.push(mk(3.0, 2, 4));
        let order: Vec<u64> = std::iter::from_fn(|| heap.pop().map(|n| n.seq)).collect();
        assert_eq!(order, vec![4, 3, 2, 1]);
    }
}
