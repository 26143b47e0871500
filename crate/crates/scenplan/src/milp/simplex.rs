//! Dense bounded-variable two-phase simplex with active-set row generation.
//!
//! The trajectory LPs built by this crate pair a small column count with a
//! potentially huge row count (one keep-out row per sample). A dense basis
//! over all rows would be unusable, so [`solve_active_set`] maintains a
//! working subset of rows: it solves the sub-LP exactly, scans the remaining
//! rows for violations (or, on an unbounded sub-LP, for rows that cut the
//! descent ray), activates the worst offenders, and repeats. The working set
//! only grows, so the loop terminates, and the final point is feasible and
//! optimal for the complete row set.
//!
//! The inner solver is a textbook primal simplex for problems in the form
//! `min c.x  s.t.  A x + s = b,  l <= (x, s) <= u`, with slack bounds
//! encoding the row sense and phase-1 artificials opening a feasible start.
//! Pricing is Dantzig (most negative reduced cost) until a run of degenerate
//! pivots exceeds 10 x the column count, after which Bland's rule takes over
//! to guarantee termination. All ties break toward the lowest index, which
//! makes iteration counts reproducible.

use super::{LpProblem, Relation};
use crate::error::{Error, Result};

/// Numeric controls for the simplex. Defaults match the crate's contract:
/// 1e-9 feasibility/optimality tolerances and a 10^6 iteration cap.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SimplexOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_iterations: u64,
    /// Rows activated per round when the working set is grown lazily.
    pub activation_batch: usize,
    /// Problems with at most this many rows skip lazy activation entirely.
    pub activate_all_threshold: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            feas_tol: 1e-9,
            opt_tol: 1e-9,
            max_iterations: 1_000_000,
            activation_batch: 64,
            activate_all_threshold: 1024,
        }
    }
}

/// Solution of an LP solved to optimality. The dual information certifies
/// optimality (exercised by the strong-duality tests) and is kept on the
/// struct for diagnostic dumps even though the planning pipeline only
/// consumes the primal part.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Dual multiplier per original row (zero for rows never activated,
    /// which are slack at the optimum).
    pub row_duals: Vec<f64>,
    /// Reduced cost per structural column.
    pub reduced_costs: Vec<f64>,
}

#[cfg_attr(not(test), allow(dead_code))]
pub(crate) enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    /// Structural-space direction along which the objective decreases without
    /// bound while every row stays satisfied.
    Unbounded { ray: Vec<f64> },
}

/// Outcome of one working-set solve.
enum InnerOutcome {
    Optimal {
        x: Vec<f64>,
        objective: f64,
        duals: Vec<f64>,
        reduced_costs: Vec<f64>,
    },
    Infeasible,
    Unbounded { ray: Vec<f64> },
}

/// Solves `problem` exactly, activating rows lazily. `iterations` accumulates
/// simplex iterations across every round (and across calls, for shared
/// counters in branch-and-bound).
pub(crate) fn solve_active_set(
    problem: &LpProblem,
    opts: &SimplexOptions,
    iterations: &mut u64,
) -> Result<LpOutcome> {
    let m_total = problem.constraints.len();
    let mut in_working = vec![false; m_total];
    let mut working: Vec<usize> = Vec::new();
    if m_total <= opts.activate_all_threshold {
        working.extend(0..m_total);
    } else {
        // Equalities can never be slack, so they are always worth carrying.
        for (i, row) in problem.constraints.iter().enumerate() {
            if row.relation == Relation::Eq {
                working.push(i);
            }
        }
    }
    for &i in &working {
        in_working[i] = true;
    }

    // The working set grows every round, so m_total + 2 rounds suffice.
    for _round in 0..m_total + 2 {
        let mut inner = Inner::new(problem, &working, opts);
        let outcome = inner.solve(iterations)?;
        match outcome {
            InnerOutcome::Infeasible => return Ok(LpOutcome::Infeasible),
            InnerOutcome::Optimal {
                x,
                objective,
                duals,
                reduced_costs,
            } => {
                let mut violated: Vec<(f64, usize)> = Vec::new();
                for i in 0..m_total {
                    if in_working[i] {
                        continue;
                    }
                    let v = problem.row_value(i, &x);
                    let row = &problem.constraints[i];
                    let excess = match row.relation {
                        Relation::Le => v - row.rhs,
                        Relation::Ge => row.rhs - v,
                        Relation::Eq => (v - row.rhs).abs(),
                    };
                    if excess > opts.feas_tol {
                        violated.push((excess, i));
                    }
                }
                if violated.is_empty() {
                    let mut row_duals = vec![0.0; m_total];
                    for (pos, &orig) in working.iter().enumerate() {
                        row_duals[orig] = duals[pos];
                    }
                    return Ok(LpOutcome::Optimal(LpSolution {
                        x,
                        objective,
                        row_duals,
                        reduced_costs,
                    }));
                }
                violated.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
                for &(_, i) in violated.iter().take(opts.activation_batch) {
                    in_working[i] = true;
                    working.push(i);
                }
            }
            InnerOutcome::Unbounded { ray } => {
                // A row cuts the ray if moving along the ray eventually
                // violates it.
                let mut blocking: Vec<(f64, usize)> = Vec::new();
                for i in 0..m_total {
                    if in_working[i] {
                        continue;
                    }
                    let d: f64 = problem.constraints[i]
                        .coeffs
                        .iter()
                        .map(|&(j, a)| a * ray[j])
                        .sum();
                    let row = &problem.constraints[i];
                    let cuts = match row.relation {
                        Relation::Le => d > opts.feas_tol,
                        Relation::Ge => d < -opts.feas_tol,
                        Relation::Eq => d.abs() > opts.feas_tol,
                    };
                    if cuts {
                        blocking.push((d.abs(), i));
                    }
                }
                if blocking.is_empty() {
                    return Ok(LpOutcome::Unbounded { ray });
                }
                blocking.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
                for &(_, i) in blocking.iter().take(opts.activation_batch) {
                    in_working[i] = true;
                    working.push(i);
                }
            }
        }
    }
    Err(Error::NumericalFailure(
        "row activation failed to converge".into(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// Free column resting at zero.
    FreeAtZero,
}

/// How far a run of degenerate pivots may go before Bland's rule engages:
/// 10 x the number of columns.
const BLAND_DEGENERACY_FACTOR: u64 = 10;
/// Pivot magnitudes below this are treated as zero in the ratio test.
const PIVOT_TOL: f64 = 1e-10;
/// Steps below this count as degenerate.
const DEGENERATE_STEP: f64 = 1e-12;
/// Basis refactorization cadence (basis changes).
const REFACTOR_EVERY: usize = 64;

struct Inner<'a> {
    problem: &'a LpProblem,
    opts: &'a SimplexOptions,
    w: usize,
    n: usize,
    /// Structural column -> (working row position, coefficient) entries.
    col_entries: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    /// Artificial column k (global index n + w + k) lives on row `art_row[k]`
    /// with coefficient `art_sign[k]`.
    art_row: Vec<usize>,
    art_sign: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    state: Vec<VarState>,
    /// Basic column per working row position.
    basic: Vec<usize>,
    /// Dense inverse of the basis matrix, row-major w x w.
    binv: Vec<f64>,
    changes_since_refactor: usize,
}

impl<'a> Inner<'a> {
    fn new(problem: &'a LpProblem, working: &[usize], opts: &'a SimplexOptions) -> Self {
        let w = working.len();
        let n = problem.num_vars;
        let mut col_entries = vec![Vec::new(); n];
        let mut rhs = Vec::with_capacity(w);
        for (pos, &orig) in working.iter().enumerate() {
            let row = &problem.constraints[orig];
            for &(j, a) in &row.coeffs {
                col_entries[j].push((pos, a));
            }
            rhs.push(row.rhs);
        }
        let mut lo = Vec::with_capacity(n + w);
        let mut hi = Vec::with_capacity(n + w);
        lo.extend_from_slice(&problem.lower);
        hi.extend_from_slice(&problem.upper);
        for &orig in working {
            match problem.constraints[orig].relation {
                Relation::Le => {
                    lo.push(0.0);
                    hi.push(f64::INFINITY);
                }
                Relation::Ge => {
                    lo.push(f64::NEG_INFINITY);
                    hi.push(0.0);
                }
                Relation::Eq => {
                    lo.push(0.0);
                    hi.push(0.0);
                }
            }
        }
        Inner {
            problem,
            opts,
            w,
            n,
            col_entries,
            rhs,
            art_row: Vec::new(),
            art_sign: Vec::new(),
            lo,
            hi,
            x: Vec::new(),
            state: Vec::new(),
            basic: Vec::new(),
            binv: Vec::new(),
            changes_since_refactor: 0,
        }
    }

    #[inline]
    fn total_cols(&self) -> usize {
        self.n + self.w + self.art_row.len()
    }

    /// Nonbasic resting value for a column in a given state.
    #[inline]
    fn bound_value(&self, j: usize, state: VarState) -> f64 {
        match state {
            VarState::AtLower => self.lo[j],
            VarState::AtUpper => self.hi[j],
            VarState::FreeAtZero => 0.0,
            VarState::Basic => unreachable!("basic columns have no resting bound"),
        }
    }

    /// y . (column j), where y is indexed by working row position.
    fn col_dot(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.n {
            self.col_entries[j].iter().map(|&(p, a)| y[p] * a).sum()
        } else if j < self.n + self.w {
            y[j - self.n]
        } else {
            let k = j - self.n - self.w;
            self.art_sign[k] * y[self.art_row[k]]
        }
    }

    /// B^-1 . (column j).
    fn ftran(&self, j: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.w];
        if j < self.n {
            for &(p, a) in &self.col_entries[j] {
                for i in 0..self.w {
                    out[i] += self.binv[i * self.w + p] * a;
                }
            }
        } else if j < self.n + self.w {
            let p = j - self.n;
            for i in 0..self.w {
                out[i] = self.binv[i * self.w + p];
            }
        } else {
            let k = j - self.n - self.w;
            let p = self.art_row[k];
            for i in 0..self.w {
                out[i] = self.art_sign[k] * self.binv[i * self.w + p];
            }
        }
        out
    }

    /// Initial point: structural columns at their bound nearest zero, slacks
    /// basic where the residual fits their bounds, artificials elsewhere.
    fn initialize(&mut self) {
        let total_structural_slack = self.n + self.w;
        self.x = vec![0.0; total_structural_slack];
        self.state = vec![VarState::FreeAtZero; total_structural_slack];
        for j in 0..self.n {
            let (l, h) = (self.lo[j], self.hi[j]);
            let (value, state) = if l.is_finite() && h.is_finite() {
                if l.abs() <= h.abs() {
                    (l, VarState::AtLower)
                } else {
                    (h, VarState::AtUpper)
                }
            } else if l.is_finite() {
                (l, VarState::AtLower)
            } else if h.is_finite() {
                (h, VarState::AtUpper)
            } else {
                (0.0, VarState::FreeAtZero)
            };
            self.x[j] = value;
            self.state[j] = state;
        }
        // Residual r = b - A x over structural columns.
        let mut residual = self.rhs.clone();
        for j in 0..self.n {
            if self.x[j] != 0.0 {
                for &(p, a) in &self.col_entries[j] {
                    residual[p] -= a * self.x[j];
                }
            }
        }
        self.basic = vec![usize::MAX; self.w];
        let mut binv_diag = vec![1.0; self.w];
        for p in 0..self.w {
            let s = self.n + p;
            let r = residual[p];
            if r >= self.lo[s] && r <= self.hi[s] {
                self.basic[p] = s;
                self.state[s] = VarState::Basic;
                self.x[s] = r;
            } else {
                // Slack rests at zero (its bound nearest the residual is the
                // zero end for every row sense); an artificial carries |r|.
                self.state[s] = if self.hi[s] == 0.0 {
                    VarState::AtUpper
                } else {
                    VarState::AtLower
                };
                self.x[s] = 0.0;
                let sign = if r >= 0.0 { 1.0 } else { -1.0 };
                let k = self.art_row.len();
                self.art_row.push(p);
                self.art_sign.push(sign);
                self.lo.push(0.0);
                self.hi.push(f64::INFINITY);
                self.x.push(r.abs());
                self.state.push(VarState::Basic);
                self.basic[p] = self.n + self.w + k;
                binv_diag[p] = sign; // inverse of a +-1 diagonal entry
            }
        }
        self.binv = vec![0.0; self.w * self.w];
        for p in 0..self.w {
            self.binv[p * self.w + p] = binv_diag[p];
        }
        self.changes_since_refactor = 0;
    }

    /// Rebuilds B^-1 by Gauss-Jordan elimination and recomputes basic values
    /// from the nonbasic point.
    fn refactor(&mut self) -> Result<()> {
        let w = self.w;
        if w == 0 {
            self.changes_since_refactor = 0;
            return Ok(());
        }
        // Augmented [B | I].
        let mut aug = vec![0.0; w * 2 * w];
        for (pos, &col) in self.basic.iter().enumerate() {
            if col < self.n {
                for &(p, a) in &self.col_entries[col] {
                    aug[p * 2 * w + pos] = a;
                }
            } else if col < self.n + self.w {
                aug[(col - self.n) * 2 * w + pos] = 1.0;
            } else {
                let k = col - self.n - self.w;
                aug[self.art_row[k] * 2 * w + pos] = self.art_sign[k];
            }
        }
        for p in 0..w {
            aug[p * 2 * w + w + p] = 1.0;
        }
        for col in 0..w {
            // Partial pivoting.
            let mut piv = col;
            let mut best = aug[col * 2 * w + col].abs();
            for r in col + 1..w {
                let v = aug[r * 2 * w + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-12 {
                return Err(Error::NumericalFailure(
                    "singular basis during refactorization".into(),
                ));
            }
            if piv != col {
                for c in 0..2 * w {
                    aug.swap(col * 2 * w + c, piv * 2 * w + c);
                }
            }
            let d = aug[col * 2 * w + col];
            for c in 0..2 * w {
                aug[col * 2 * w + c] /= d;
            }
            for r in 0..w {
                if r != col {
                    let f = aug[r * 2 * w + col];
                    if f != 0.0 {
                        for c in 0..2 * w {
                            aug[r * 2 * w + c] -= f * aug[col * 2 * w + c];
                        }
                    }
                }
            }
        }
        for p in 0..w {
            for c in 0..w {
                self.binv[p * self.w + c] = aug[p * 2 * w + w + c];
            }
        }
        // Recompute basic values: x_B = B^-1 (b - N x_N); nonbasic slacks and
        // artificials rest at zero, so only structural columns contribute.
        let mut r = self.rhs.clone();
        for j in 0..self.n {
            if self.state[j] != VarState::Basic && self.x[j] != 0.0 {
                for &(p, a) in &self.col_entries[j] {
                    r[p] -= a * self.x[j];
                }
            }
        }
        for p in 0..w {
            let mut v = 0.0;
            for c in 0..w {
                v += self.binv[p * self.w + c] * r[c];
            }
            self.x[self.basic[p]] = v;
        }
        self.changes_since_refactor = 0;
        Ok(())
    }

    /// Product-form pivot: basis row `p` replaced through entering column
    /// with FTRAN image `wcol`.
    fn pivot_binv(&mut self, p: usize, wcol: &[f64]) {
        let w = self.w;
        let piv = wcol[p];
        for c in 0..w {
            self.binv[p * w + c] /= piv;
        }
        for i in 0..w {
            if i != p {
                let f = wcol[i];
                if f != 0.0 {
                    for c in 0..w {
                        self.binv[i * w + c] -= f * self.binv[p * w + c];
                    }
                }
            }
        }
        self.changes_since_refactor += 1;
    }

    /// One phase of the primal simplex under `costs`. Returns `None` when the
    /// phase reached optimality, or the unbounded descent data.
    fn run_phase(
        &mut self,
        costs: &[f64],
        iterations: &mut u64,
    ) -> Result<Option<(usize, f64, Vec<f64>)>> {
        let mut degenerate_run = 0u64;
        loop {
            if *iterations >= self.opts.max_iterations {
                return Err(Error::NumericalFailure(format!(
                    "simplex iteration cap of {} reached",
                    self.opts.max_iterations
                )));
            }
            *iterations += 1;
            if self.changes_since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            let bland = degenerate_run > BLAND_DEGENERACY_FACTOR * self.total_cols() as u64;

            // BTRAN: y = c_B B^-1.
            let mut y = vec![0.0; self.w];
            for p in 0..self.w {
                let cb = costs[self.basic[p]];
                if cb != 0.0 {
                    for c in 0..self.w {
                        y[c] += cb * self.binv[p * self.w + c];
                    }
                }
            }

            // Pricing.
            let mut entering: Option<(usize, f64, f64)> = None; // (col, |d|, d)
            'price: for j in 0..self.total_cols() {
                let st = self.state[j];
                if st == VarState::Basic || self.lo[j] == self.hi[j] {
                    continue;
                }
                let d = costs[j] - self.col_dot(j, &y);
                let eligible = match st {
                    VarState::AtLower => d < -self.opts.opt_tol,
                    VarState::AtUpper => d > self.opts.opt_tol,
                    VarState::FreeAtZero => d.abs() > self.opts.opt_tol,
                    VarState::Basic => false,
                };
                if !eligible {
                    continue;
                }
                if bland {
                    entering = Some((j, d.abs(), d));
                    break 'price;
                }
                match entering {
                    Some((_, best, _)) if d.abs() <= best => {}
                    _ => entering = Some((j, d.abs(), d)),
                }
            }
            let Some((e, _, d_e)) = entering else {
                return Ok(None); // phase optimal
            };

            let sigma = match self.state[e] {
                VarState::AtLower => 1.0,
                VarState::AtUpper => -1.0,
                VarState::FreeAtZero => {
                    if d_e < 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                VarState::Basic => unreachable!(),
            };

            let wcol = self.ftran(e);

            // Ratio test: smallest step at which a basic column or the
            // entering column itself hits a bound.
            let own_range = self.hi[e] - self.lo[e];
            let mut t_best = if own_range.is_finite() {
                own_range
            } else {
                f64::INFINITY
            };
            let mut leaving: Option<(usize, VarState)> = None; // (row pos, state after leaving)
            let mut leave_quality = 0.0; // |pivot|, for stability ties
            for p in 0..self.w {
                let delta = sigma * wcol[p]; // basic p decreases at rate delta
                let b_col = self.basic[p];
                let (t, to_state, quality) = if delta > PIVOT_TOL {
                    if self.lo[b_col] == f64::NEG_INFINITY {
                        continue;
                    }
                    (
                        ((self.x[b_col] - self.lo[b_col]) / delta).max(0.0),
                        VarState::AtLower,
                        delta.abs(),
                    )
                } else if delta < -PIVOT_TOL {
                    if self.hi[b_col] == f64::INFINITY {
                        continue;
                    }
                    (
                        ((self.x[b_col] - self.hi[b_col]) / delta).max(0.0),
                        VarState::AtUpper,
                        delta.abs(),
                    )
                } else {
                    continue;
                };
                let replace = if t < t_best - 1e-12 {
                    true
                } else if t <= t_best + 1e-12 {
                    match leaving {
                        None => t < t_best, // prefer a true blocking row over the bound flip only if strictly smaller
                        Some((q, _)) => {
                            if bland {
                                self.basic[p] < self.basic[q]
                            } else {
                                quality > leave_quality + 1e-15
                                    || (quality >= leave_quality - 1e-15
                                        && self.basic[p] < self.basic[q])
                            }
                        }
                    }
                } else {
                    false
                };
                if replace {
                    t_best = t.min(t_best);
                    leaving = Some((p, to_state));
                    leave_quality = quality;
                }
            }

            if t_best.is_infinite() {
                return Ok(Some((e, sigma, wcol))); // unbounded along entering
            }

            if t_best > DEGENERATE_STEP {
                degenerate_run = 0;
            } else {
                degenerate_run += 1;
            }

            // Move the point.
            if t_best != 0.0 {
                for p in 0..self.w {
                    let b_col = self.basic[p];
                    self.x[b_col] -= t_best * sigma * wcol[p];
                }
            }
            match leaving {
                None => {
                    // Bound flip: entering travels its whole range.
                    let new_state = match self.state[e] {
                        VarState::AtLower => VarState::AtUpper,
                        VarState::AtUpper => VarState::AtLower,
                        _ => unreachable!("free columns have no finite range"),
                    };
                    self.state[e] = new_state;
                    self.x[e] = self.bound_value(e, new_state);
                }
                Some((p, to_state)) => {
                    let old_value = match self.state[e] {
                        VarState::FreeAtZero => 0.0,
                        st => self.bound_value(e, st),
                    };
                    let leaving_col = self.basic[p];
                    self.state[leaving_col] = to_state;
                    self.x[leaving_col] = self.bound_value(leaving_col, to_state);
                    // Artificials that leave the basis in phase 1 are barred
                    // from returning.
                    if leaving_col >= self.n + self.w {
                        self.lo[leaving_col] = 0.0;
                        self.hi[leaving_col] = 0.0;
                    }
                    self.state[e] = VarState::Basic;
                    self.x[e] = old_value + sigma * t_best;
                    self.basic[p] = e;
                    self.pivot_binv(p, &wcol);
                }
            }
        }
    }

    /// Pivots still-basic zero-valued artificials out of the basis where a
    /// replacement column exists; fixes the rest in place (dependent rows).
    fn drive_out_artificials(&mut self) -> Result<()> {
        for p in 0..self.w {
            if self.basic[p] < self.n + self.w {
                continue;
            }
            let mut replacement: Option<(usize, Vec<f64>)> = None;
            for j in 0..self.n + self.w {
                if self.state[j] == VarState::Basic || self.lo[j] == self.hi[j] {
                    continue;
                }
                let wcol = self.ftran(j);
                if wcol[p].abs() > 1e-8 {
                    replacement = Some((j, wcol));
                    break;
                }
            }
            if let Some((j, wcol)) = replacement {
                let art = self.basic[p];
                self.state[art] = VarState::AtLower;
                self.x[art] = 0.0;
                self.lo[art] = 0.0;
                self.hi[art] = 0.0;
                let resting = match self.state[j] {
                    VarState::FreeAtZero => 0.0,
                    st => self.bound_value(j, st),
                };
                self.state[j] = VarState::Basic;
                self.x[j] = resting; // zero-length step
                self.basic[p] = j;
                self.pivot_binv(p, &wcol);
            } else {
                // Dependent row: keep the artificial basic, pinned at zero.
                let art = self.basic[p];
                self.lo[art] = 0.0;
                self.hi[art] = 0.0;
                self.x[art] = 0.0;
            }
        }
        Ok(())
    }

    fn solve(&mut self, iterations: &mut u64) -> Result<InnerOutcome> {
        self.initialize();
        let scale = 1.0 + self.rhs.iter().fold(0.0f64, |m, b| m.max(b.abs()));

        // Phase 1: drive artificial infeasibility to zero.
        if !self.art_row.is_empty() {
            let mut costs = vec![0.0; self.total_cols()];
            for k in 0..self.art_row.len() {
                costs[self.n + self.w + k] = 1.0;
            }
            let unbounded = self.run_phase(&costs, iterations)?;
            debug_assert!(unbounded.is_none(), "phase 1 is bounded below by zero");
            let infeas: f64 = (0..self.art_row.len())
                .map(|k| self.x[self.n + self.w + k])
                .sum();
            if infeas > self.opts.feas_tol * scale {
                return Ok(InnerOutcome::Infeasible);
            }
            self.drive_out_artificials()?;
        }

        // Phase 2: the real objective.
        let mut costs = vec![0.0; self.total_cols()];
        costs[..self.n].copy_from_slice(&self.problem.objective);
        let outcome = self.run_phase(&costs, iterations)?;

        match outcome {
            Some((e, sigma, wcol)) => {
                let mut ray = vec![0.0; self.n];
                if e < self.n {
                    ray[e] = sigma;
                }
                for p in 0..self.w {
                    let b_col = self.basic[p];
                    if b_col < self.n {
                        ray[b_col] = -sigma * wcol[p];
                    }
                }
                Ok(InnerOutcome::Unbounded { ray })
            }
            None => {
                // Polish: refactor once at optimality so reported values and
                // duals come from a freshly inverted basis.
                self.refactor()?;
                let mut y = vec![0.0; self.w];
                for p in 0..self.w {
                    let cb = costs[self.basic[p]];
                    if cb != 0.0 {
                        for c in 0..self.w {
                            y[c] += cb * self.binv[p * self.w + c];
                        }
                    }
                }
                let reduced_costs: Vec<f64> = (0..self.n)
                    .map(|j| self.problem.objective[j] - self.col_dot(j, &y))
                    .collect();
                let x = self.x[..self.n].to_vec();
                let objective = self.problem.objective_value(&x);
                Ok(InnerOutcome::Optimal {
                    x,
                    objective,
                    duals: y,
                    reduced_costs,
                })
            }
        }
    }
}
