//! Linear and mixed-binary linear programming.
//!
//! The trajectory problems this crate builds are linear programs with a
//! moderate number of columns and — for the scenario method — a very large
//! number of big-M disjunction rows (one per halfspace, step, vehicle, and
//! sample). [`solve_lp`] therefore runs a dense bounded-variable two-phase
//! simplex over an actively managed working subset of rows, pulling in
//! violated rows until the full system is satisfied; the result is the exact
//! optimum of the full LP. [`solve_milp`] wraps it in best-first
//! branch-and-bound over the declared binary columns, and
//! [`brute_force_milp`] solves the same problem by exhaustive binary
//! enumeration as an independent reference path.
//!
//! Determinism: identical inputs produce identical solutions, iteration
//! counts, and node counts. All tie-breaks are by lowest index.

mod branch_bound;
pub mod lp_format;
mod simplex;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub use lp_format::write_lp;

/// Row sense of a linear constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

/// Sparse linear constraint `sum coeffs . x  (<=|>=|=)  rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    /// `(column, coefficient)` pairs; columns need not be sorted but must not
    /// repeat.
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// Linear program `min objective . x` subject to rows and column bounds.
/// Bounds may be infinite; `lower[j] == upper[j]` fixes a column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LpProblem {
    /// A problem with `num_vars` free columns, zero objective, and no rows.
    pub fn new(num_vars: usize) -> Self {
        LpProblem {
            num_vars,
            objective: vec![0.0; num_vars],
            constraints: Vec::new(),
            lower: vec![f64::NEG_INFINITY; num_vars],
            upper: vec![f64::INFINITY; num_vars],
        }
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }

    /// Structural sanity checks: lengths agree, indices in range, finite
    /// coefficients, lower <= upper.
    pub fn validate(&self) -> Result<()> {
        if self.objective.len() != self.num_vars
            || self.lower.len() != self.num_vars
            || self.upper.len() != self.num_vars
        {
            return Err(Error::DimensionMismatch(format!(
                "objective/bounds length must equal num_vars = {}",
                self.num_vars
            )));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(
                "objective coefficients must be finite".into(),
            ));
        }
        for j in 0..self.num_vars {
            if self.lower[j] > self.upper[j] {
                return Err(Error::InvalidArgument(format!(
                    "column {j} has lower bound {} above upper bound {}",
                    self.lower[j], self.upper[j]
                )));
            }
            if self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(Error::InvalidArgument(format!("column {j} has NaN bound")));
            }
        }
        for (i, row) in self.constraints.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(Error::InvalidArgument(format!("row {i} has non-finite rhs")));
            }
            let mut seen = std::collections::HashSet::new();
            for &(col, coeff) in &row.coeffs {
                if col >= self.num_vars {
                    return Err(Error::DimensionMismatch(format!(
                        "row {i} references column {col} (num_vars = {})",
                        self.num_vars
                    )));
                }
                if !coeff.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "row {i} has non-finite coefficient on column {col}"
                    )));
                }
                if !seen.insert(col) {
                    return Err(Error::InvalidArgument(format!(
                        "row {i} repeats column {col}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Value of row `i`'s left-hand side at `x`.
    pub fn row_value(&self, i: usize, x: &[f64]) -> f64 {
        self.constraints[i]
            .coeffs
            .iter()
            .map(|&(j, a)| a * x[j])
            .sum()
    }

    /// Largest constraint violation at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (i, row) in self.constraints.iter().enumerate() {
            let v = self.row_value(i, x);
            let viol = match row.relation {
                Relation::Le => v - row.rhs,
                Relation::Ge => row.rhs - v,
                Relation::Eq => (v - row.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        for j in 0..self.num_vars {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

/// Mixed-binary program: a base LP plus the set of columns restricted to
/// {0, 1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpProblem {
    pub base: LpProblem,
    /// Strictly increasing column indices of the binary variables.
    pub binaries: Vec<usize>,
}

impl MilpProblem {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.binaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "binary column list must be strictly increasing".into(),
            ));
        }
        for &b in &self.binaries {
            if b >= self.base.num_vars {
                return Err(Error::DimensionMismatch(format!(
                    "binary column {b} out of range (num_vars = {})",
                    self.base.num_vars
                )));
            }
        }
        Ok(())
    }

    /// Base LP with binary columns clamped into [0, 1] (the root relaxation).
    fn relaxed(&self) -> LpProblem {
        let mut lp = self.base.clone();
        for &b in &self.binaries {
            lp.lower[b] = lp.lower[b].max(0.0);
            lp.upper[b] = lp.upper[b].min(1.0);
        }
        lp
    }
}

/// Outcome classification of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Work counters. Identical across repeated solves of the same problem.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveStats {
    /// Branch-and-bound nodes evaluated (LP solves), or enumerated
    /// assignments for the brute-force path; 1 for a plain LP solve.
    pub nodes: usize,
    /// Simplex iterations summed over every LP solve and activation round.
    pub lp_iterations: u64,
    /// Incumbent objective after each improvement, in discovery order.
    pub incumbent_trace: Vec<f64>,
}

/// Solution report. `values` is empty unless `status == Optimal`;
/// `objective` is `+inf` for infeasible and `-inf` for unbounded problems
/// (minimization conventions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpSolution {
    pub status: SolveStatus,
    pub values: Vec<f64>,
    pub objective: f64,
    pub stats: SolveStats,
}

impl MilpSolution {
    fn infeasible(stats: SolveStats) -> Self {
        MilpSolution {
            status: SolveStatus::Infeasible,
            values: Vec::new(),
            objective: f64::INFINITY,
            stats,
        }
    }

    fn unbounded(stats: SolveStats) -> Self {
        MilpSolution {
            status: SolveStatus::Unbounded,
            values: Vec::new(),
            objective: f64::NEG_INFINITY,
            stats,
        }
    }
}

/// Branch-and-bound controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MilpOptions {
    /// Evaluated-node budget; exceeding it is an error carrying the incumbent.
    pub node_budget: usize,
    /// Absolute optimality gap at which the search stops.
    pub gap_tol: f64,
    /// Distance from an integer below which a binary counts as integral.
    pub int_tol: f64,
}

impl Default for MilpOptions {
    fn default() -> Self {
        MilpOptions {
            node_budget: 1_000_000,
            gap_tol: 1e-6,
            int_tol: 1e-6,
        }
    }
}

/// Solves a pure LP to proven optimality (exact over the full row set, even
/// when rows are activated lazily). Infeasible and unbounded problems are
/// reported through `status`, not as errors; `Err` is reserved for numerical
/// breakdown or invalid input.
pub fn solve_lp(problem: &LpProblem) -> Result<MilpSolution> {
    problem.validate()?;
    let mut iterations = 0u64;
    let outcome = simplex::solve_active_set(problem, &simplex::SimplexOptions::default(), &mut iterations)?;
    let stats = SolveStats {
        nodes: 1,
        lp_iterations: iterations,
        incumbent_trace: Vec::new(),
    };
    Ok(match outcome {
        simplex::LpOutcome::Optimal(sol) => MilpSolution {
            status: SolveStatus::Optimal,
            objective: sol.objective,
            values: sol.x,
            stats,
        },
        simplex::LpOutcome::Infeasible => MilpSolution::infeasible(stats),
        simplex::LpOutcome::Unbounded { .. } => MilpSolution::unbounded(stats),
    })
}

/// Solves a mixed-binary LP by best-first branch-and-bound with
/// most-fractional branching (default options).
pub fn solve_milp(problem: &MilpProblem) -> Result<MilpSolution> {
    solve_milp_with(problem, &MilpOptions::default())
}

/// [`solve_milp`] with explicit options.
pub fn solve_milp_with(problem: &MilpProblem, options: &MilpOptions) -> Result<MilpSolution> {
    problem.validate()?;
    branch_bound::solve(problem, options)
}

/// Reference solver: enumerates every binary assignment (at most 2^20) and
/// solves the induced LPs. Exponential; intended for cross-checking the
/// branch-and-bound path on small instances.
pub fn brute_force_milp(problem: &MilpProblem) -> Result<MilpSolution> {
    problem.validate()?;
    let k = problem.binaries.len();
    if k > 20 {
        return Err(Error::TooManyBinaries(k));
    }
    let mut stats = SolveStats::default();
    let mut best: Option<MilpSolution> = None;
    let mut any_unbounded = false;
    let relaxed = problem.relaxed();
    for mask in 0u64..(1u64 << k) {
        let mut lp = relaxed.clone();
        for (bit, &col) in problem.binaries.iter().enumerate() {
            let v = ((mask >> bit) & 1) as f64;
            lp.lower[col] = v;
            lp.upper[col] = v;
        }
        let sol = solve_lp(&lp)?;
        stats.nodes += 1;
        stats.lp_iterations += sol.stats.lp_iterations;
        match sol.status {
            SolveStatus::Optimal => {
                let better = match &best {
                    None => true,
                    Some(b) => sol.objective < b.objective,
                };
                if better {
                    stats.incumbent_trace.push(sol.objective);
                    best = Some(sol);
                }
            }
            SolveStatus::Unbounded => any_unbounded = true,
            SolveStatus::Infeasible => {}
        }
    }
    Ok(match best {
        Some(mut b) => {
            b.stats = stats;
            b
        }
        None if any_unbounded => MilpSolution::unbounded(stats),
        None => MilpSolution::infeasible(stats),
    })
}
