//! Trajectory optimization over linear time-varying dynamics with keep-out
//! disjunctions.
//!
//! Two formulations are built from the same base problem (dynamics
//! equalities, box bounds, convex objective):
//!
//! * **Cluster plan** — forecasts are grouped per vehicle, each group is
//!   covered by a fixed-normal polytope per step, and the output must sit
//!   outside every polytope. Binaries: one per (halfspace, step, vehicle,
//!   cluster); big-M rows: one per binary.
//! * **Scenario plan** — every individual forecast sample becomes a keep-out
//!   set; the escape-direction binaries are shared across samples, so the
//!   binary count stays at one per (halfspace, step, vehicle) while the
//!   big-M row count scales with the sample count.
//!
//! "Outside" is encoded non-strictly (a mixed-integer program cannot express
//! strict inequalities): for at least one halfspace `j` of the keep-out
//! polytope, `normal_j . y_t >= offset_j + clearance`. Per-row big-M
//! constants are computed from the model's output box, which therefore must
//! be bounded whenever obstacles are present.

use crate::bounds::Allocation;
use crate::bounds::RiskSpec;
use crate::clustering::{self, ClusterIndex};
use crate::error::{BlockRef, Error, Result};
use crate::geometry::{self, Polytope};
use crate::milp::{
    solve_milp_with, LpProblem, MilpOptions, MilpProblem, Relation, SolveStats, SolveStatus,
};
use crate::prediction::PredictionSet;
use crate::rng::{purpose, CounterRng};
use serde::{Deserialize, Serialize};

/// Tolerance for the post-solve self-checks: dynamics rollout agreement and
/// keep-out exterior (interior depth) of the reported trajectory.
pub const PLAN_CHECK_TOL: f64 = 1e-7;

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Linear time-varying model
/// `x_{t+1} = A_t x_t + B_t u_t`, `y_t = C_t x_t`, with per-coordinate box
/// bounds on states, inputs, and outputs. Matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtvModel {
    /// Number of planned steps `T`; states and outputs exist for `t ∈ 1..=T`.
    pub horizon: usize,
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    /// `A_t` for `t ∈ 0..T-1`, each `n_x x n_x`.
    pub a: Vec<Vec<f64>>,
    /// `B_t` for `t ∈ 0..T-1`, each `n_x x n_u`.
    pub b: Vec<Vec<f64>>,
    /// `C_t` for `t ∈ 1..=T` (index `t-1`), each `n_y x n_x`.
    pub c: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    pub state_lower: Vec<f64>,
    pub state_upper: Vec<f64>,
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
    pub output_lower: Vec<f64>,
    pub output_upper: Vec<f64>,
}

impl LtvModel {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if self.n_x == 0 || self.n_u == 0 || self.n_y == 0 {
            return Err(Error::InvalidArgument(
                "state, input, and output dimensions must be positive".into(),
            ));
        }
        let t = self.horizon;
        let dims = [
            ("A", self.a.len(), t, self.n_x * self.n_x),
            ("B", self.b.len(), t, self.n_x * self.n_u),
            ("C", self.c.len(), t, self.n_y * self.n_x),
        ];
        for (name, count, expect_count, expect_len) in dims {
            if count != expect_count {
                return Err(Error::DimensionMismatch(format!(
                    "expected {expect_count} {name} matrices, found {count}"
                )));
            }
            let list = match name {
                "A" => &self.a,
                "B" => &self.b,
                _ => &self.c,
            };
            for (i, m) in list.iter().enumerate() {
                if m.len() != expect_len {
                    return Err(Error::DimensionMismatch(format!(
                        "{name}[{i}] has {} entries, expected {expect_len}",
                        m.len()
                    )));
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "{name}[{i}] contains a non-finite entry"
                    )));
                }
            }
        }
        if self.x0.len() != self.n_x {
            return Err(Error::DimensionMismatch(format!(
                "x0 has {} entries, expected {}",
                self.x0.len(),
                self.n_x
            )));
        }
        let boxes = [
            ("state", &self.state_lower, &self.state_upper, self.n_x),
            ("input", &self.input_lower, &self.input_upper, self.n_u),
            ("output", &self.output_lower, &self.output_upper, self.n_y),
        ];
        for (name, lo, hi, n) in boxes {
            if lo.len() != n || hi.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{name} box must have {n} coordinates"
                )));
            }
            for j in 0..n {
                if lo[j].is_nan() || hi[j].is_nan() || lo[j] > hi[j] {
                    return Err(Error::InvalidArgument(format!(
                        "{name} box coordinate {j} is invalid: [{}, {}]",
                        lo[j], hi[j]
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn a_at(&self, t: usize, r: usize, c: usize) -> f64 {
        self.a[t][r * self.n_x + c]
    }
    #[inline]
    fn b_at(&self, t: usize, r: usize, c: usize) -> f64 {
        self.b[t][r * self.n_u + c]
    }
    #[inline]
    fn c_at(&self, t: usize, r: usize, c: usize) -> f64 {
        self.c[t - 1][r * self.n_x + c]
    }

    /// Rolls the dynamics forward under `inputs`, returning states and
    /// outputs for `t ∈ 1..=T`.
    pub fn rollout(&self, inputs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        if inputs.len() != self.horizon {
            return Err(Error::DimensionMismatch(format!(
                "expected {} inputs, got {}",
                self.horizon,
                inputs.len()
            )));
        }
        let mut states = Vec::with_capacity(self.horizon);
        let mut outputs = Vec::with_capacity(self.horizon);
        let mut x = self.x0.clone();
        for t in 1..=self.horizon {
            let u = &inputs[t - 1];
            if u.len() != self.n_u {
                return Err(Error::DimensionMismatch(format!(
                    "input {} has {} coordinates, expected {}",
                    t - 1,
                    u.len(),
                    self.n_u
                )));
            }
            let mut next = vec![0.0; self.n_x];
            for (r, item) in next.iter_mut().enumerate() {
                let mut v = 0.0;
                for c in 0..self.n_x {
                    v += self.a_at(t - 1, r, c) * x[c];
                }
                for c in 0..self.n_u {
                    v += self.b_at(t - 1, r, c) * u[c];
                }
                *item = v;
            }
            x = next;
            let mut y = vec![0.0; self.n_y];
            for (r, item) in y.iter_mut().enumerate() {
                let mut v = 0.0;
                for c in 0..self.n_x {
                    v += self.c_at(t, r, c) * x[c];
                }
                *item = v;
            }
            states.push(x.clone());
            outputs.push(y);
        }
        Ok((states, outputs))
    }
}

/// Planar double integrator under zero-order hold: state
/// `[px, py, vx, vy]`, input `[ax, ay]`, output `[px, py]`. Velocity is
/// boxed at `±speed_bound` per axis, input at `±accel_bound`. Positions are
/// boxed by the reachable radius `horizon * dt * speed_bound` around the
/// start, which also grounds the big-M constants.
pub fn double_integrator(
    dt: f64,
    horizon: usize,
    speed_bound: f64,
    accel_bound: f64,
    x0: [f64; 4],
) -> Result<LtvModel> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !(speed_bound > 0.0) || !(accel_bound > 0.0) {
        return Err(Error::InvalidArgument(
            "speed and acceleration bounds must be positive".into(),
        ));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let a = vec![
        1.0, 0.0, dt, 0.0, //
        0.0, 1.0, 0.0, dt, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    ];
    let half_dt2 = 0.5 * dt * dt;
    let b = vec![
        half_dt2, 0.0, //
        0.0, half_dt2, //
        dt, 0.0, //
        0.0, dt,
    ];
    let c = vec![
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0,
    ];
    let reach = horizon as f64 * dt * speed_bound;
    let model = LtvModel {
        horizon,
        n_x: 4,
        n_u: 2,
        n_y: 2,
        a: vec![a; horizon],
        b: vec![b; horizon],
        c: vec![c; horizon],
        x0: x0.to_vec(),
        state_lower: vec![
            x0[0] - reach,
            x0[1] - reach,
            -speed_bound,
            -speed_bound,
        ],
        state_upper: vec![x0[0] + reach, x0[1] + reach, speed_bound, speed_bound],
        input_lower: vec![-accel_bound, -accel_bound],
        input_upper: vec![accel_bound, accel_bound],
        output_lower: vec![x0[0] - reach, x0[1] - reach],
        output_upper: vec![x0[0] + reach, x0[1] + reach],
    };
    model.validate()?;
    Ok(model)
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

/// Reference to one scalar decision quantity. `State`/`Output` use
/// `t ∈ 1..=T`, `Input` uses `t ∈ 0..T-1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarRef {
    State { t: usize, coord: usize },
    Input { t: usize, coord: usize },
    Output { t: usize, coord: usize },
}

/// `weight * quantity` added to the minimized objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearTerm {
    pub var: VarRef,
    pub weight: f64,
}

/// `weight * |quantity - reference|` added to the minimized objective
/// (epigraph-encoded; weight must be nonnegative for convexity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsTerm {
    pub var: VarRef,
    pub weight: f64,
    pub reference: f64,
}

/// Convex piecewise-linear objective: linear terms plus weighted absolute
/// deviations. Terminal costs are just terms with `t = T`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    #[serde(default)]
    pub linear: Vec<LinearTerm>,
    #[serde(default)]
    pub absolute: Vec<AbsTerm>,
}

impl ObjectiveSpec {
    pub fn validate(&self, model: &LtvModel) -> Result<()> {
        let check = |var: &VarRef| -> Result<()> {
            let (t_ok, coord_ok) = match *var {
                VarRef::State { t, coord } => {
                    (t >= 1 && t <= model.horizon, coord < model.n_x)
                }
                VarRef::Input { t, coord } => (t < model.horizon, coord < model.n_u),
                VarRef::Output { t, coord } => {
                    (t >= 1 && t <= model.horizon, coord < model.n_y)
                }
            };
            if !t_ok || !coord_ok {
                return Err(Error::InvalidArgument(format!(
                    "objective term references {var:?}, which is outside the model \
                     (horizon {}, n_x {}, n_u {}, n_y {})",
                    model.horizon, model.n_x, model.n_u, model.n_y
                )));
            }
            Ok(())
        };
        for term in &self.linear {
            check(&term.var)?;
            if !term.weight.is_finite() {
                return Err(Error::InvalidArgument(
                    "linear objective weights must be finite".into(),
                ));
            }
        }
        for term in &self.absolute {
            check(&term.var)?;
            if !term.weight.is_finite() || term.weight < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "absolute-deviation weights must be finite and nonnegative, got {}",
                    term.weight
                )));
            }
            if !term.reference.is_finite() {
                return Err(Error::InvalidArgument(
                    "absolute-deviation references must be finite".into(),
                ));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Column layout
// ---------------------------------------------------------------------------

/// Column map of a built problem: inputs, then states, then outputs, then
/// absolute-deviation epigraph columns, then binaries.
#[derive(Debug, Clone, PartialEq)]
pub struct VarLayout {
    pub horizon: usize,
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub off_u: usize,
    pub off_x: usize,
    pub off_y: usize,
    pub off_abs: usize,
    pub num_abs: usize,
    /// First binary column (columns before it are continuous).
    pub off_z: usize,
}

impl VarLayout {
    /// Input column, `t ∈ 0..T-1`.
    #[inline]
    pub fn input(&self, t: usize, coord: usize) -> usize {
        self.off_u + t * self.n_u + coord
    }
    /// State column, `t ∈ 1..=T`.
    #[inline]
    pub fn state(&self, t: usize, coord: usize) -> usize {
        self.off_x + (t - 1) * self.n_x + coord
    }
    /// Output column, `t ∈ 1..=T`.
    #[inline]
    pub fn output(&self, t: usize, coord: usize) -> usize {
        self.off_y + (t - 1) * self.n_y + coord
    }

    fn column_of(&self, var: &VarRef) -> usize {
        match *var {
            VarRef::State { t, coord } => self.state(t, coord),
            VarRef::Input { t, coord } => self.input(t, coord),
            VarRef::Output { t, coord } => self.output(t, coord),
        }
    }
}

/// Base LP: dynamics/output equalities, box bounds, objective (with
/// epigraph rows for absolute terms). No obstacles yet.
fn base_problem(model: &LtvModel, objective: &ObjectiveSpec) -> Result<(LpProblem, VarLayout)> {
    model.validate()?;
    objective.validate(model)?;
    let t_max = model.horizon;
    let layout = VarLayout {
        horizon: t_max,
        n_x: model.n_x,
        n_u: model.n_u,
        n_y: model.n_y,
        off_u: 0,
        off_x: t_max * model.n_u,
        off_y: t_max * model.n_u + t_max * model.n_x,
        off_abs: t_max * (model.n_u + model.n_x + model.n_y),
        num_abs: objective.absolute.len(),
        off_z: t_max * (model.n_u + model.n_x + model.n_y) + objective.absolute.len(),
    };
    let mut lp = LpProblem::new(layout.off_z);

    for t in 0..t_max {
        for j in 0..model.n_u {
            lp.set_bounds(layout.input(t, j), model.input_lower[j], model.input_upper[j]);
        }
    }
    for t in 1..=t_max {
        for j in 0..model.n_x {
            lp.set_bounds(layout.state(t, j), model.state_lower[j], model.state_upper[j]);
        }
        for j in 0..model.n_y {
            lp.set_bounds(
                layout.output(t, j),
                model.output_lower[j],
                model.output_upper[j],
            );
        }
    }
    for i in 0..layout.num_abs {
        lp.set_bounds(layout.off_abs + i, 0.0, f64::INFINITY);
    }

    // Dynamics: x_1 - B_0 u_0 = A_0 x0; x_t - A_{t-1} x_{t-1} - B_{t-1}
    // u_{t-1} = 0 for t >= 2.
    for t in 1..=t_max {
        for r in 0..model.n_x {
            let mut coeffs = vec![(layout.state(t, r), 1.0)];
            if t >= 2 {
                for c in 0..model.n_x {
                    let v = model.a_at(t - 1, r, c);
                    if v != 0.0 {
                        coeffs.push((layout.state(t - 1, c), -v));
                    }
                }
            }
            for c in 0..model.n_u {
                let v = model.b_at(t - 1, r, c);
                if v != 0.0 {
                    coeffs.push((layout.input(t - 1, c), -v));
                }
            }
            let rhs = if t == 1 {
                (0..model.n_x).map(|c| model.a_at(0, r, c) * model.x0[c]).sum()
            } else {
                0.0
            };
            lp.add_row(coeffs, Relation::Eq, rhs);
        }
        // Outputs: y_t - C_t x_t = 0.
        for r in 0..model.n_y {
            let mut coeffs = vec![(layout.output(t, r), 1.0)];
            for c in 0..model.n_x {
                let v = model.c_at(t, r, c);
                if v != 0.0 {
                    coeffs.push((layout.state(t, c), -v));
                }
            }
            lp.add_row(coeffs, Relation::Eq, 0.0);
        }
    }

    for term in &objective.linear {
        lp.objective[layout.column_of(&term.var)] += term.weight;
    }
    for (i, term) in objective.absolute.iter().enumerate() {
        let e = layout.off_abs + i;
        let v = layout.column_of(&term.var);
        // e >= v - ref  and  e >= ref - v.
        lp.add_row(vec![(e, 1.0), (v, -1.0)], Relation::Ge, -term.reference);
        lp.add_row(vec![(e, 1.0), (v, 1.0)], Relation::Ge, term.reference);
        lp.objective[e] += term.weight;
    }

    Ok((lp, layout))
}

/// Appends a fresh binary column, returning its index.
fn push_binary(lp: &mut LpProblem) -> usize {
    let col = lp.num_vars;
    lp.num_vars += 1;
    lp.objective.push(0.0);
    lp.lower.push(0.0);
    lp.upper.push(1.0);
    col
}

/// Big-M for one keep-out row: large enough that a disabled row
/// (`z = 0`) excludes no point of the output box, tight enough for numerics.
fn big_m(normal: [f64; 2], threshold: f64, out_lo: &[f64], out_hi: &[f64]) -> Result<f64> {
    let mut min_dot = 0.0;
    for d in 0..2 {
        let v = if normal[d] >= 0.0 {
            normal[d] * out_lo[d]
        } else {
            normal[d] * out_hi[d]
        };
        min_dot += v;
    }
    let m = (threshold - min_dot).max(0.0) + 1.0;
    if !m.is_finite() {
        return Err(Error::InvalidArgument(
            "obstacle avoidance needs a bounded output box to ground the big-M \
             constants"
                .into(),
        ));
    }
    Ok(m)
}

/// Adds the exterior disjunction of `polytope` at step `t`: per halfspace
/// `j`, `normal_j . y_t + M_j (1 - z_j) >= offset_j + clearance`, with the
/// covering row `sum_j z_j >= 1` appended by the caller once per binary set.
fn add_exterior_rows(
    lp: &mut LpProblem,
    layout: &VarLayout,
    t: usize,
    polytope: &Polytope,
    clearance: f64,
    z_cols: &[usize],
    model: &LtvModel,
) -> Result<()> {
    debug_assert_eq!(z_cols.len(), polytope.rows.len());
    for (j, row) in polytope.rows.iter().enumerate() {
        let threshold = row.offset + clearance;
        let m = big_m(row.normal, threshold, &model.output_lower, &model.output_upper)?;
        let mut coeffs = Vec::with_capacity(3);
        for d in 0..2 {
            if row.normal[d] != 0.0 {
                coeffs.push((layout.output(t, d), row.normal[d]));
            }
        }
        coeffs.push((z_cols[j], -m));
        lp.add_row(coeffs, Relation::Ge, threshold - m);
    }
    Ok(())
}

/// Keep-out covers for the cluster formulation, indexed `[vehicle][cluster]
/// [t - 1]`.
pub type ClusterCover = Vec<Vec<Vec<Polytope>>>;

/// Builds the cluster-formulation program: binaries `z_{j,t,o,k}` (halfspace
/// x step x vehicle x cluster) with one big-M row each plus one covering row
/// per (step, vehicle, cluster).
pub fn build_cluster_plan(
    model: &LtvModel,
    objective: &ObjectiveSpec,
    cover: &ClusterCover,
    clearance: f64,
) -> Result<(MilpProblem, VarLayout)> {
    let (mut lp, layout) = base_problem(model, objective)?;
    let mut rows_per_polytope: Option<usize> = None;
    for (o, clusters) in cover.iter().enumerate() {
        if clusters.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "vehicle {o} has no clusters"
            )));
        }
        for (k, per_t) in clusters.iter().enumerate() {
            if per_t.len() != model.horizon {
                return Err(Error::DimensionMismatch(format!(
                    "vehicle {o} cluster {} supplies {} step polytopes, expected {}",
                    k + 1,
                    per_t.len(),
                    model.horizon
                )));
            }
            for p in per_t {
                let l = p.rows.len();
                if l < 3 {
                    return Err(Error::InvalidArgument(format!(
                        "keep-out polytopes need at least 3 halfspaces, got {l}"
                    )));
                }
                match rows_per_polytope {
                    None => rows_per_polytope = Some(l),
                    Some(prev) if prev != l => {
                        return Err(Error::DimensionMismatch(format!(
                            "mixed halfspace counts across cover polytopes: {prev} vs {l}"
                        )));
                    }
                    Some(_) => {}
                }
            }
        }
    }

    let mut binaries = Vec::new();
    for (o, clusters) in cover.iter().enumerate() {
        for (k, per_t) in clusters.iter().enumerate() {
            let _ = (o, k); // loop order fixes the binary layout: (o, k, t, j)
            for t in 1..=model.horizon {
                let poly = &per_t[t - 1];
                let z_cols: Vec<usize> = (0..poly.rows.len()).map(|_| push_binary(&mut lp)).collect();
                add_exterior_rows(&mut lp, &layout, t, poly, clearance, &z_cols, model)?;
                lp.add_row(
                    z_cols.iter().map(|&c| (c, 1.0)).collect(),
                    Relation::Ge,
                    1.0,
                );
                binaries.extend(z_cols);
            }
        }
    }

    let problem = MilpProblem { base: lp, binaries };
    problem.validate()?;
    Ok((problem, layout))
}

/// Builds the scenario-formulation program: binaries `z_{j,t,o}` shared by
/// all samples, one big-M row per (halfspace, step, vehicle, sample), one
/// covering row per (step, vehicle).
pub fn build_scenario_plan(
    model: &LtvModel,
    objective: &ObjectiveSpec,
    samples: &PredictionSet,
    halfspaces: usize,
    inflation: f64,
    clearance: f64,
) -> Result<(MilpProblem, VarLayout)> {
    samples.validate()?;
    if samples.horizon != model.horizon {
        return Err(Error::HorizonMismatch(format!(
            "forecast horizon {} differs from the model horizon {}",
            samples.horizon, model.horizon
        )));
    }
    let (mut lp, layout) = base_problem(model, objective)?;
    let mut binaries = Vec::new();
    for o in 0..samples.num_ovs {
        for t in 1..=model.horizon {
            let z_cols: Vec<usize> = (0..halfspaces).map(|_| push_binary(&mut lp)).collect();
            for i in 0..samples.num_samples {
                let poly = geometry::obstacle_polytope(samples.state(i, t, o), halfspaces, inflation)?;
                add_exterior_rows(&mut lp, &layout, t, &poly, clearance, &z_cols, model)?;
            }
            lp.add_row(
                z_cols.iter().map(|&c| (c, 1.0)).collect(),
                Relation::Ge,
                1.0,
            );
            binaries.extend(z_cols);
        }
    }
    let problem = MilpProblem { base: lp, binaries };
    problem.validate()?;
    Ok((problem, layout))
}

// ---------------------------------------------------------------------------
// End-to-end planning
// ---------------------------------------------------------------------------

/// Which chance-constraint reduction to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Clusters,
    Scenario,
}

/// How forecast samples are grouped into modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum ClusterStrategy {
    /// k-means on final-step positions; one cluster count per vehicle.
    Kmeans { clusters_per_ov: Vec<usize> },
    /// Pass through the forecast source's mode labels.
    Labels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringConfig {
    #[serde(flatten)]
    pub strategy: ClusterStrategy,
    #[serde(default)]
    pub seed: u64,
    /// Labels strategy only: modes with probability below this are merged
    /// into their nearest retained mode before planning.
    #[serde(default)]
    pub merge_threshold: Option<f64>,
}

/// Keep-out construction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    /// Halfspaces per keep-out polytope (4 = oriented rectangle).
    pub halfspaces: usize,
    /// Isotropic footprint inflation (m), e.g. half the EV width.
    #[serde(default)]
    pub inflation: f64,
    /// Extra exterior margin added to every keep-out threshold (m).
    #[serde(default)]
    pub clearance: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            halfspaces: 4,
            inflation: 0.0,
            clearance: 0.0,
        }
    }
}

/// One keep-out polytope actually enforced in a plan. `t` is 1-based, `ov`
/// 0-based, `cluster` 1-based (0 marks the scenario formulation, where
/// polytopes are per-sample and not stored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedPolytope {
    pub t: usize,
    pub ov: usize,
    pub cluster: usize,
    pub polytope: Polytope,
}

/// Clustering provenance for one vehicle, sufficient to assign fresh
/// samples to the planned clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvClusters {
    /// Vehicle index (0-based).
    pub ov: usize,
    /// Final-step centroid per cluster, ascending cluster id.
    pub centroids: Vec<[f64; 2]>,
    /// Source label per cluster for label-based assignment (ascending).
    pub labels: Option<Vec<i64>>,
    /// Realized member counts among the planning samples.
    pub sizes: Vec<usize>,
    /// Mode probabilities, when the forecast source provided them.
    pub probabilities: Option<Vec<f64>>,
}

impl OvClusters {
    /// Maps a fresh sample to a cluster: by label when both sides carry
    /// labels (falling back to the nearest centroid for labels unseen at
    /// planning time, e.g. merged-away rare modes), else by nearest
    /// final-step centroid.
    pub fn assign(&self, final_position: [f64; 2], label: Option<i64>) -> usize {
        if let (Some(labels), Some(l)) = (&self.labels, label) {
            if let Some(k) = labels.iter().position(|&x| x == l) {
                return k;
            }
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, c) in self.centroids.iter().enumerate() {
            let d = (c[0] - final_position[0]).powi(2) + (c[1] - final_position[1]).powi(2);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }
}

/// A solved plan with full provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub method: Method,
    pub horizon: usize,
    pub objective: f64,
    /// `u_t` for `t ∈ 0..T-1`.
    pub inputs: Vec<Vec<f64>>,
    /// `x_t` for `t ∈ 1..=T`.
    pub states: Vec<Vec<f64>>,
    /// `y_t` for `t ∈ 1..=T`.
    pub outputs: Vec<Vec<f64>>,
    /// Enforced keep-out polytopes (cluster method; empty for scenario).
    pub polytopes: Vec<TimedPolytope>,
    /// Clustering provenance per vehicle (empty for scenario).
    pub ov_clusters: Vec<OvClusters>,
    pub risk: RiskSpec,
    /// Per-cluster risk shares and sample requirements (cluster method).
    pub allocation: Option<Allocation>,
    pub geometry: GeometryConfig,
    /// Planning samples consumed.
    pub samples_used: usize,
    pub stats: SolveStats,
}

/// Everything `plan` needs.
pub struct PlanRequest<'a> {
    pub model: &'a LtvModel,
    pub objective: &'a ObjectiveSpec,
    pub predictions: &'a PredictionSet,
    pub risk: RiskSpec,
    pub method: Method,
    pub clustering: &'a ClusteringConfig,
    pub geometry: GeometryConfig,
    /// Cluster method: the risk allocation used to size the sample set
    /// (embedded in the result for provenance).
    pub allocation: Option<Allocation>,
    pub milp_options: Option<MilpOptions>,
}

/// Runs the configured formulation end to end: (cluster the forecasts,
/// cover each cluster,) build the program, solve it, self-check the
/// solution, and assemble the provenance-carrying result.
pub fn plan(req: &PlanRequest) -> Result<PlanResult> {
    req.model.validate()?;
    req.objective.validate(req.model)?;
    req.predictions.validate()?;
    req.risk.validate()?;
    let options = req.milp_options.unwrap_or_default();

    match req.method {
        Method::Scenario => {
            let (problem, layout) = build_scenario_plan(
                req.model,
                req.objective,
                req.predictions,
                req.geometry.halfspaces,
                req.geometry.inflation,
                req.geometry.clearance,
            )?;
            let sol = solve_milp_with(&problem, &options)?;
            match sol.status {
                SolveStatus::Optimal => {}
                SolveStatus::Infeasible => {
                    return Err(Error::Infeasible {
                        blocking: scenario_blocking(req),
                    })
                }
                SolveStatus::Unbounded => return Err(Error::Unbounded),
            }
            let (inputs, states, outputs) = extract(&layout, &sol.values);
            verify_rollout(req.model, &inputs, &states, &outputs)?;
            // Self-check: the trajectory sits outside (or on the boundary
            // of) every sampled keep-out set.
            for o in 0..req.predictions.num_ovs {
                for t in 1..=req.model.horizon {
                    for i in 0..req.predictions.num_samples {
                        let poly = geometry::obstacle_polytope(
                            req.predictions.state(i, t, o),
                            req.geometry.halfspaces,
                            req.geometry.inflation,
                        )?;
                        let depth = poly.interior_depth([outputs[t - 1][0], outputs[t - 1][1]]);
                        if depth > PLAN_CHECK_TOL {
                            return Err(Error::NumericalFailure(format!(
                                "reported output at step {t} sits {depth:.3e} inside \
                                 the keep-out set of sample {}, vehicle {o}",
                                i + 1
                            )));
                        }
                    }
                }
            }
            Ok(PlanResult {
                method: Method::Scenario,
                horizon: req.model.horizon,
                objective: sol.objective,
                inputs,
                states,
                outputs,
                polytopes: Vec::new(),
                ov_clusters: Vec::new(),
                risk: req.risk,
                allocation: None,
                geometry: req.geometry,
                samples_used: req.predictions.num_samples,
                stats: sol.stats,
            })
        }
        Method::Clusters => {
            let (cover, ov_clusters) = cluster_and_cover(req)?;
            let (problem, layout) =
                build_cluster_plan(req.model, req.objective, &cover, req.geometry.clearance)?;
            let sol = solve_milp_with(&problem, &options)?;
            match sol.status {
                SolveStatus::Optimal => {}
                SolveStatus::Infeasible => {
                    return Err(Error::Infeasible {
                        blocking: cluster_blocking(req.model, &cover),
                    })
                }
                SolveStatus::Unbounded => return Err(Error::Unbounded),
            }
            let (inputs, states, outputs) = extract(&layout, &sol.values);
            verify_rollout(req.model, &inputs, &states, &outputs)?;
            let mut polytopes = Vec::new();
            for (o, clusters) in cover.iter().enumerate() {
                for (k, per_t) in clusters.iter().enumerate() {
                    for t in 1..=req.model.horizon {
                        let poly = &per_t[t - 1];
                        let depth = poly.interior_depth([outputs[t - 1][0], outputs[t - 1][1]]);
                        if depth > PLAN_CHECK_TOL {
                            return Err(Error::NumericalFailure(format!(
                                "reported output at step {t} sits {depth:.3e} inside \
                                 cluster {} of vehicle {o}",
                                k + 1
                            )));
                        }
                        polytopes.push(TimedPolytope {
                            t,
                            ov: o,
                            cluster: k + 1,
                            polytope: poly.clone(),
                        });
                    }
                }
            }
            Ok(PlanResult {
                method: Method::Clusters,
                horizon: req.model.horizon,
                objective: sol.objective,
                inputs,
                states,
                outputs,
                polytopes,
                ov_clusters,
                risk: req.risk,
                allocation: req.allocation.clone(),
                geometry: req.geometry,
                samples_used: req.predictions.num_samples,
                stats: sol.stats,
            })
        }
    }
}

/// Groups every vehicle's forecasts per the clustering configuration and
/// returns, per vehicle, the member index sets plus the provenance record
/// used to assign fresh samples later.
pub fn cluster_forecasts(
    predictions: &PredictionSet,
    clustering_config: &ClusteringConfig,
) -> Result<Vec<(ClusterIndex, OvClusters)>> {
    predictions.validate()?;
    let mut out = Vec::with_capacity(predictions.num_ovs);
    for o in 0..predictions.num_ovs {
        let features = predictions.final_positions(o);
        let (index, cluster_labels) = match &clustering_config.strategy {
            ClusterStrategy::Kmeans { clusters_per_ov } => {
                if clusters_per_ov.len() != predictions.num_ovs {
                    return Err(Error::InvalidArgument(format!(
                        "clusters_per_ov lists {} vehicles, forecasts have {}",
                        clusters_per_ov.len(),
                        predictions.num_ovs
                    )));
                }
                let seed =
                    CounterRng::from_key(&[clustering_config.seed, purpose::KMEANS, o as u64])
                        .next_u64();
                (
                    clustering::cluster_kmeans(&features, clusters_per_ov[o], seed)?,
                    None,
                )
            }
            ClusterStrategy::Labels => {
                let labels = predictions.labels_for(o).ok_or_else(|| {
                    Error::InvalidArgument(
                        "label-based clustering requires labeled forecasts".into(),
                    )
                })?;
                let probs = predictions.mode_probs.as_ref().map(|p| p[o].clone());
                let (labels, probs) = match (clustering_config.merge_threshold, probs) {
                    (Some(threshold), Some(probs)) => {
                        let (l, p) =
                            clustering::merge_rare_modes(&labels, &probs, &features, threshold)?;
                        (l, Some(p))
                    }
                    (_, probs) => (labels, probs),
                };
                let mut uniq: Vec<i64> = labels.clone();
                uniq.sort_unstable();
                uniq.dedup();
                (
                    clustering::cluster_by_labels(&labels, &features, probs.as_ref())?,
                    Some(uniq),
                )
            }
        };
        let probabilities = index
            .clusters
            .iter()
            .map(|c| c.probability)
            .collect::<Option<Vec<f64>>>();
        let provenance = OvClusters {
            ov: o,
            centroids: index.clusters.iter().map(|c| c.centroid).collect(),
            labels: cluster_labels,
            sizes: index.clusters.iter().map(|c| c.members.len()).collect(),
            probabilities,
        };
        out.push((index, provenance));
    }
    Ok(out)
}

/// Clusters every vehicle's forecasts and wraps each cluster in per-step
/// cover polytopes.
fn cluster_and_cover(req: &PlanRequest) -> Result<(ClusterCover, Vec<OvClusters>)> {
    let preds = req.predictions;
    let grouped = cluster_forecasts(preds, req.clustering)?;
    let mut cover: ClusterCover = Vec::with_capacity(preds.num_ovs);
    let mut provenance = Vec::with_capacity(preds.num_ovs);
    for (o, (index, ov_clusters)) in grouped.into_iter().enumerate() {
        let mut per_cluster = Vec::with_capacity(index.k());
        for cluster in &index.clusters {
            let mut per_t = Vec::with_capacity(preds.horizon);
            for t in 1..=preds.horizon {
                let states: Vec<_> = cluster
                    .members
                    .iter()
                    .map(|&i| *preds.state(i, t, o))
                    .collect();
                per_t.push(geometry::overapproximate(
                    &states,
                    req.geometry.halfspaces,
                    req.geometry.inflation,
                )?);
            }
            per_cluster.push(per_t);
        }
        cover.push(per_cluster);
        provenance.push(ov_clusters);
    }
    Ok((cover, provenance))
}

/// Splits a flat MILP solution vector into inputs/states/outputs.
fn extract(layout: &VarLayout, values: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let inputs = (0..layout.horizon)
        .map(|t| (0..layout.n_u).map(|j| values[layout.input(t, j)]).collect())
        .collect();
    let states = (1..=layout.horizon)
        .map(|t| (0..layout.n_x).map(|j| values[layout.state(t, j)]).collect())
        .collect();
    let outputs = (1..=layout.horizon)
        .map(|t| (0..layout.n_y).map(|j| values[layout.output(t, j)]).collect())
        .collect();
    (inputs, states, outputs)
}

/// Confirms the reported trajectory reproduces the dynamics rollout of the
/// reported inputs within [`PLAN_CHECK_TOL`].
fn verify_rollout(
    model: &LtvModel,
    inputs: &[Vec<f64>],
    states: &[Vec<f64>],
    outputs: &[Vec<f64>],
) -> Result<()> {
    let (rolled_states, rolled_outputs) = model.rollout(&inputs.to_vec())?;
    let mut worst = 0.0f64;
    for t in 0..model.horizon {
        for j in 0..model.n_x {
            worst = worst.max((rolled_states[t][j] - states[t][j]).abs());
        }
        for j in 0..model.n_y {
            worst = worst.max((rolled_outputs[t][j] - outputs[t][j]).abs());
        }
    }
    if worst > PLAN_CHECK_TOL {
        return Err(Error::NumericalFailure(format!(
            "reported trajectory deviates from the dynamics rollout by {worst:.3e}"
        )));
    }
    Ok(())
}

/// Diagnoses cluster-method infeasibility: polytopes that cover the entire
/// output box block every trajectory on their own.
fn cluster_blocking(model: &LtvModel, cover: &ClusterCover) -> Vec<BlockRef> {
    let lo = [model.output_lower[0], model.output_lower[1]];
    let hi = [model.output_upper[0], model.output_upper[1]];
    let mut out = Vec::new();
    for (o, clusters) in cover.iter().enumerate() {
        for (k, per_t) in clusters.iter().enumerate() {
            for t in 1..=model.horizon {
                if per_t[t - 1].contains_box(lo, hi) {
                    out.push(BlockRef {
                        t,
                        ov: o,
                        cluster: k + 1,
                    });
                }
            }
        }
    }
    out
}

/// Diagnoses scenario-method infeasibility: a (step, vehicle) pair where
/// some sampled keep-out set covers the whole output box.
fn scenario_blocking(req: &PlanRequest) -> Vec<BlockRef> {
    let model = req.model;
    let lo = [model.output_lower[0], model.output_lower[1]];
    let hi = [model.output_upper[0], model.output_upper[1]];
    let mut out = Vec::new();
    for o in 0..req.predictions.num_ovs {
        for t in 1..=model.horizon.min(req.predictions.horizon) {
            let covered = (0..req.predictions.num_samples).any(|i| {
                geometry::obstacle_polytope(
                    req.predictions.state(i, t, o),
                    req.geometry.halfspaces,
                    req.geometry.inflation,
                )
                .map(|p| p.contains_box(lo, hi))
                .unwrap_or(false)
            });
            if covered {
                out.push(BlockRef {
                    t,
                    ov: o,
                    cluster: 0,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OvState;
    use crate::prediction::{generate, GeneratorKind, GeneratorSpec};

    /// Wide-open 1-D test model: x-axis motion with the second output pinned
    /// to zero by its box, so keep-out rectangles can only be escaped left
    /// or right.
    fn line_model(horizon: usize) -> LtvModel {
        let mut m = double_integrator(0.5, horizon, 100.0, 100.0, [0.0, 0.0, 0.0, 0.0]).unwrap();
        m.state_lower[1] = 0.0;
        m.state_upper[1] = 0.0;
        m.state_lower[3] = 0.0;
        m.state_upper[3] = 0.0;
        m.output_lower[1] = 0.0;
        m.output_upper[1] = 0.0;
        m.input_lower[1] = 0.0;
        m.input_upper[1] = 0.0;
        m
    }

    fn abs_objective_on_first_output(t: usize) -> ObjectiveSpec {
        ObjectiveSpec {
            linear: vec![],
            absolute: vec![AbsTerm {
                var: VarRef::Output { t, coord: 0 },
                weight: 1.0,
                reference: 0.0,
            }],
        }
    }

    #[test]
    fn discretization_coefficients_are_exact() {
        let m = double_integrator(0.5, 3, 10.0, 3.0, [0.0; 4]).unwrap();
        // Position-from-input 0.125, velocity-from-input 0.5.
        assert_eq!(m.b[0][0], 0.125);
        assert_eq!(m.b[0][4], 0.5);
        // Position-from-velocity dt = 0.5.
        assert_eq!(m.a[0][2], 0.5);
    }

    #[test]
    fn zero_input_from_rest_stays_put() {
        let m = double_integrator(0.5, 4, 10.0, 3.0, [1.0, 2.0, 0.0, 0.0]).unwrap();
        let (_, outputs) = m.rollout(&vec![vec![0.0, 0.0]; 4]).unwrap();
        for y in outputs {
            assert_eq!(y, vec![1.0, 2.0]);
        }
    }

    #[test]
    fn constant_unit_accel_matches_kinematics() {
        let m = double_integrator(1.0, 3, 100.0, 10.0, [0.0; 4]).unwrap();
        let (_, outputs) = m.rollout(&vec![vec![1.0, 0.0]; 3]).unwrap();
        let xs: Vec<f64> = outputs.iter().map(|y| y[0]).collect();
        assert_eq!(xs, vec![0.5, 2.0, 4.5]);
    }

    #[test]
    fn binary_and_row_counts_match_the_formulas() {
        // Cluster plan: O=1, K=2, L=4, T=10 -> 80 binaries, 80 big-M rows +
        // 20 covering rows on top of the base problem.
        let model = double_integrator(0.5, 10, 15.0, 3.0, [0.0, 3.5, 10.0, 0.0]).unwrap();
        let objective = ObjectiveSpec::default();
        let (base, _) = base_problem(&model, &objective).unwrap();
        let sample = OvState::new(12.0, 0.0, 0.0, 5.0, 2.2);
        let per_t: Vec<Polytope> = (1..=10)
            .map(|_| geometry::overapproximate(&[sample], 4, 0.0).unwrap())
            .collect();
        let cover: ClusterCover = vec![vec![per_t.clone(), per_t.clone()]];
        let (milp, _) = build_cluster_plan(&model, &objective, &cover, 0.0).unwrap();
        assert_eq!(milp.binaries.len(), 4 * 10 * 2);
        assert_eq!(
            milp.base.constraints.len() - base.constraints.len(),
            80 + 20
        );

        // Scenario plan: L=4, T=10, O=1, N=7 -> 40 binaries, 280 big-M rows
        // + 10 covering rows.
        let spec = GeneratorSpec {
            seed: 3,
            kind: GeneratorKind::AccelBrakeOv {
                start: sample,
                speed: 10.0,
                dt: 0.5,
                horizon: 10,
                modes: vec![
                    crate::prediction::OvMode {
                        accel: -2.0,
                        probability: 0.5,
                    },
                    crate::prediction::OvMode {
                        accel: 3.0,
                        probability: 0.5,
                    },
                ],
                noise_sigma: 0.1,
                speed_cap: Some(15.0),
            },
        };
        let preds = generate(&spec, 7).unwrap();
        let (milp, _) = build_scenario_plan(&model, &objective, &preds, 4, 0.0, 0.0).unwrap();
        assert_eq!(milp.binaries.len(), 4 * 10 * 1);
        assert_eq!(
            milp.base.constraints.len() - base.constraints.len(),
            4 * 10 * 1 * 7 + 10
        );
    }

    #[test]
    fn no_obstacles_reduces_to_tracking_lp() {
        let model = line_model(2);
        let objective = ObjectiveSpec {
            linear: vec![],
            absolute: vec![AbsTerm {
                var: VarRef::Output { t: 2, coord: 0 },
                weight: 1.0,
                reference: 3.0,
            }],
        };
        let (milp, layout) = build_cluster_plan(&model, &objective, &vec![], 0.0).unwrap();
        assert!(milp.binaries.is_empty());
        let sol = crate::milp::solve_milp(&milp).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.objective.abs() < 1e-9, "tracking cost {}", sol.objective);
        assert!((sol.values[layout.output(2, 0)] - 3.0).abs() < 1e-9);
    }

    /// Two separated interval clusters on the line: the gap between them
    /// contains the origin, so the optimal |y| cost is zero.
    #[test]
    fn separated_interval_clusters_cost_zero() {
        let model = line_model(1);
        let objective = abs_objective_on_first_output(1);
        let left: Vec<OvState> = [-2.0, -1.6, -1.0]
            .iter()
            .map(|&x| OvState::new(x, 0.0, 0.0, 0.2, 1.0))
            .collect();
        let right: Vec<OvState> = [1.0, 1.4, 2.0]
            .iter()
            .map(|&x| OvState::new(x, 0.0, 0.0, 0.2, 1.0))
            .collect();
        let cover: ClusterCover = vec![vec![
            vec![geometry::overapproximate(&left, 4, 0.0).unwrap()],
            vec![geometry::overapproximate(&right, 4, 0.0).unwrap()],
        ]];
        let (milp, layout) = build_cluster_plan(&model, &objective, &cover, 0.0).unwrap();
        let sol = crate::milp::solve_milp(&milp).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.objective.abs() < 1e-9, "got {}", sol.objective);
        assert!(sol.values[layout.output(1, 0)].abs() < 1e-9);
    }

    /// The scenario formulation shares one escape direction across all
    /// samples, so even though y = 0 avoids every individual keep-out
    /// interval, the optimum must clear the whole sample set to one side:
    /// cost = min(max_i X_i, -min_i X_i) + half-length.
    #[test]
    fn scenario_cost_clears_an_entire_side() {
        let model = line_model(1);
        let objective = abs_objective_on_first_output(1);
        let spec = GeneratorSpec {
            seed: 17,
            kind: GeneratorKind::UniformMixture1d {
                intervals: vec![[-2.0, -1.0], [1.0, 2.0]],
                weights: vec![0.5, 0.5],
            },
        };
        let preds = generate(&spec, 40).unwrap();
        let xs: Vec<f64> = (0..preds.num_samples)
            .map(|i| preds.state(i, 1, 0).x)
            .collect();
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let expected = hi.min(-lo) + 0.1;
        let (milp, _) = build_scenario_plan(&model, &objective, &preds, 4, 0.0, 0.0).unwrap();
        let sol = crate::milp::solve_milp(&milp).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(
            (sol.objective - expected).abs() < 1e-6,
            "objective {} vs cheaper-side clearance {}",
            sol.objective,
            expected
        );
        // Far from the cost-0 point the per-sample gaps would allow.
        assert!(sol.objective > 1.0);
    }

    #[test]
    fn single_sample_scenario_equals_single_cluster_plan() {
        let model = line_model(1);
        // Track the obstacle center so the optimum is forced onto the
        // keep-out boundary.
        let objective = ObjectiveSpec {
            linear: vec![],
            absolute: vec![AbsTerm {
                var: VarRef::Output { t: 1, coord: 0 },
                weight: 1.0,
                reference: 1.3,
            }],
        };
        let state = OvState::new(1.3, 0.0, 0.0, 0.2, 1.0);
        let preds = crate::prediction::PredictionSet::from_states(
            1,
            1,
            vec![state],
            None,
            None,
        )
        .unwrap();
        let (scenario, _) = build_scenario_plan(&model, &objective, &preds, 4, 0.0, 0.0).unwrap();
        let cover: ClusterCover =
            vec![vec![vec![geometry::overapproximate(&[state], 4, 0.0).unwrap()]]];
        let (clusters, _) = build_cluster_plan(&model, &objective, &cover, 0.0).unwrap();
        let a = crate::milp::solve_milp(&scenario).unwrap();
        let b = crate::milp::solve_milp(&clusters).unwrap();
        assert_eq!(a.status, SolveStatus::Optimal);
        assert!((a.objective - b.objective).abs() < 1e-9);
        // Both must step off the center to the interval boundary (cost the
        // sample half-length): the single-sample cover is the sample's own
        // keep-out set.
        assert!((a.objective - 0.1).abs() < 1e-9, "got {}", a.objective);
    }

    #[test]
    fn plan_end_to_end_with_kmeans_clusters() {
        let model = line_model(1);
        let objective = abs_objective_on_first_output(1);
        let spec = GeneratorSpec {
            seed: 23,
            kind: GeneratorKind::UniformMixture1d {
                intervals: vec![[-2.0, -1.0], [1.0, 2.0]],
                weights: vec![0.5, 0.5],
            },
        };
        let preds = generate(&spec, 60).unwrap();
        let clustering = ClusteringConfig {
            strategy: ClusterStrategy::Kmeans {
                clusters_per_ov: vec![2],
            },
            seed: 5,
            merge_threshold: None,
        };
        let req = PlanRequest {
            model: &model,
            objective: &objective,
            predictions: &preds,
            risk: RiskSpec::new(0.05, 0.01).unwrap(),
            method: Method::Clusters,
            clustering: &clustering,
            geometry: GeometryConfig::default(),
            allocation: None,
            milp_options: None,
        };
        let result = plan(&req).unwrap();
        assert_eq!(result.method, Method::Clusters);
        assert!(result.objective.abs() < 1e-9, "got {}", result.objective);
        assert_eq!(result.ov_clusters.len(), 1);
        assert_eq!(result.ov_clusters[0].sizes.iter().sum::<usize>(), 60);
        assert_eq!(result.polytopes.len(), 2); // K=2 clusters x T=1
        assert_eq!(result.samples_used, 60);
        // The plan sits outside both covers and between the modes.
        let y = result.outputs[0][0];
        assert!(y.abs() < 0.95, "expected a between-modes output, got {y}");
        // Feasibility transfer: outside every training sample's keep-out
        // set (strict interior check must fail everywhere).
        for i in 0..preds.num_samples {
            let poly = geometry::obstacle_polytope(preds.state(i, 1, 0), 4, 0.0).unwrap();
            assert!(!geometry::contains(&poly, [y, result.outputs[0][1]], true));
        }
    }

    #[test]
    fn plan_scenario_objective_dominates_cluster_objective() {
        // Conservativeness on the shared bimodal fixture: the scenario
        // method must clear every sample (cost > 1), the cluster method
        // slots into the mode gap (cost 0).
        let model = line_model(1);
        let objective = abs_objective_on_first_output(1);
        let spec = GeneratorSpec {
            seed: 29,
            kind: GeneratorKind::UniformMixture1d {
                intervals: vec![[-2.0, -1.0], [1.0, 2.0]],
                weights: vec![0.5, 0.5],
            },
        };
        let preds = generate(&spec, 50).unwrap();
        let clustering = ClusteringConfig {
            strategy: ClusterStrategy::Labels,
            seed: 0,
            merge_threshold: None,
        };
        let base = PlanRequest {
            model: &model,
            objective: &objective,
            predictions: &preds,
            risk: RiskSpec::new(0.05, 0.01).unwrap(),
            method: Method::Clusters,
            clustering: &clustering,
            geometry: GeometryConfig::default(),
            allocation: None,
            milp_options: None,
        };
        let cluster_plan = plan(&base).unwrap();
        let scenario_req = PlanRequest {
            method: Method::Scenario,
            ..base
        };
        let scenario_plan = plan(&scenario_req).unwrap();
        assert!(scenario_plan.objective > cluster_plan.objective + 1.0);
        assert!(scenario_plan.polytopes.is_empty());
        assert_eq!(cluster_plan.ov_clusters[0].labels, Some(vec![0, 1]));
        assert_eq!(
            cluster_plan.ov_clusters[0].probabilities,
            Some(vec![0.5, 0.5])
        );
    }

    #[test]
    fn blocked_problem_reports_blocking_polytopes() {
        let model = line_model(1);
        let objective = abs_objective_on_first_output(1);
        // One obstacle so long it covers the whole reachable line segment.
        let wall = OvState::new(0.0, 0.0, 0.0, 250.0, 1.0);
        let preds =
            crate::prediction::PredictionSet::from_states(1, 1, vec![wall], None, None).unwrap();
        let clustering = ClusteringConfig {
            strategy: ClusterStrategy::Kmeans {
                clusters_per_ov: vec![1],
            },
            seed: 0,
            merge_threshold: None,
        };
        let req = PlanRequest {
            model: &model,
            objective: &objective,
            predictions: &preds,
            risk: RiskSpec::new(0.05, 0.01).unwrap(),
            method: Method::Clusters,
            clustering: &clustering,
            geometry: GeometryConfig::default(),
            allocation: None,
            milp_options: None,
        };
        match plan(&req) {
            Err(Error::Infeasible { blocking }) => {
                assert_eq!(blocking.len(), 1);
                assert_eq!((blocking[0].t, blocking[0].ov, blocking[0].cluster), (1, 0, 1));
            }
            other => panic!("expected infeasible with diagnostics, got {other:?}"),
        }
        // Scenario path reports the same block with cluster = 0.
        let req = PlanRequest {
            method: Method::Scenario,
            ..req
        };
        match plan(&req) {
            Err(Error::Infeasible { blocking }) => {
                assert_eq!((blocking[0].t, blocking[0].ov, blocking[0].cluster), (1, 0, 0));
            }
            other => panic!("expected infeasible with diagnostics, got {other:?}"),
        }
    }

    #[test]
    fn unbounded_objective_is_reported() {
        let mut model = line_model(1);
        // Remove the position box entirely and ask for unbounded progress.
        model.state_lower[0] = f64::NEG_INFINITY;
        model.state_upper[0] = f64::INFINITY;
        model.output_lower[0] = f64::NEG_INFINITY;
        model.output_upper[0] = f64::INFINITY;
        model.state_lower[2] = f64::NEG_INFINITY;
        model.state_upper[2] = f64::INFINITY;
        model.input_lower[0] = f64::NEG_INFINITY;
        model.input_upper[0] = f64::INFINITY;
        let objective = ObjectiveSpec {
            linear: vec![LinearTerm {
                var: VarRef::Output { t: 1, coord: 0 },
                weight: -1.0,
            }],
            absolute: vec![],
        };
        let preds = crate::prediction::PredictionSet::from_states(
            1,
            1,
            vec![OvState::new(50.0, 0.0, 0.0, 0.2, 1.0)],
            None,
            None,
        )
        .unwrap();
        let clustering = ClusteringConfig {
            strategy: ClusterStrategy::Labels,
            seed: 0,
            merge_threshold: None,
        };
        let req = PlanRequest {
            model: &model,
            objective: &objective,
            predictions: &preds,
            risk: RiskSpec::new(0.05, 0.01).unwrap(),
            method: Method::Scenario,
            clustering: &clustering,
            geometry: GeometryConfig::default(),
            allocation: None,
            milp_options: None,
        };
        // Unbounded box means big-M cannot be grounded; the builder reports
        // the configuration error instead of a bogus plan.
        match plan(&req) {
            Err(Error::InvalidArgument(msg)) => assert!(msg.contains("bounded output box")),
            other => panic!("expected the big-M grounding error, got {other:?}"),
        }
    }

    #[test]
    fn merge_threshold_folds_rare_modes_before_planning() {
        let model = line_model(1);
        let objective = abs_objective_on_first_output(1);
        // 10 samples: labels 1 (common) and 9 (rare, p = 0.04).
        let mut states = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            let (x, l) = if i == 9 { (1.5, 9i64) } else { (-1.5, 1i64) };
            states.push(OvState::new(x, 0.0, 0.0, 0.2, 1.0));
            labels.push(l);
        }
        let mut probs = std::collections::BTreeMap::new();
        probs.insert(1i64, 0.96);
        probs.insert(9i64, 0.04);
        let preds = crate::prediction::PredictionSet::from_states(
            1,
            1,
            states,
            Some(labels),
            Some(vec![probs]),
        )
        .unwrap();
        let clustering = ClusteringConfig {
            strategy: ClusterStrategy::Labels,
            seed: 0,
            merge_threshold: Some(0.05),
        };
        let req = PlanRequest {
            model: &model,
            objective: &objective,
            predictions: &preds,
            risk: RiskSpec::new(0.1, 0.05).unwrap(),
            method: Method::Clusters,
            clustering: &clustering,
            geometry: GeometryConfig::default(),
            allocation: None,
            milp_options: None,
        };
        let result = plan(&req).unwrap();
        // One retained mode, probability renormalized to 1, rare sample
        // absorbed.
        assert_eq!(result.ov_clusters[0].labels, Some(vec![1]));
        assert_eq!(result.ov_clusters[0].probabilities, Some(vec![1.0]));
        assert_eq!(result.ov_clusters[0].sizes, vec![10]);
        // The single merged cover now spans both modes, so the optimum must
        // clear it entirely rather than slot between.
        assert!(result.objective > 1.0);
    }

    #[test]
    fn plan_results_serialize_round_trip() {
        let model = line_model(1);
        let objective = abs_objective_on_first_output(1);
        let spec = GeneratorSpec {
            seed: 31,
            kind: GeneratorKind::UniformMixture1d {
                intervals: vec![[-2.0, -1.0], [1.0, 2.0]],
                weights: vec![0.5, 0.5],
            },
        };
        let preds = generate(&spec, 30).unwrap();
        let clustering = ClusteringConfig {
            strategy: ClusterStrategy::Labels,
            seed: 0,
            merge_threshold: None,
        };
        let req = PlanRequest {
            model: &model,
            objective: &objective,
            predictions: &preds,
            risk: RiskSpec::new(0.05, 0.01).unwrap(),
            method: Method::Clusters,
            clustering: &clustering,
            geometry: GeometryConfig::default(),
            allocation: None,
            milp_options: None,
        };
        let result = plan(&req).unwrap();
        let json = serde_json::to_string(&result).unwrap();
        let back: PlanResult = serde_json::from_str(&json).unwrap();
        assert_eq!(result, back);
    }
}
