//! Empirical checks of a solved plan against fresh forecast samples.
//!
//! Two layers:
//!
//! * [`empirical_violation`] counts how many fresh samples the planned
//!   trajectory actually collides with (strict interior of the sampled
//!   keep-out set at some step/vehicle), estimating the plan's true
//!   violation probability.
//! * [`certify`] Monte-Carlos the full pipeline: it re-plans many times on
//!   independent sample draws and reports how often the resulting plans
//!   exceed the configured risk level. For cluster plans it additionally
//!   checks, per run, the chain that underwrites the risk split: the
//!   trajectory's violation count never exceeds the summed per-cluster
//!   cover-failure counts.

use crate::bounds::Allocation;
use crate::bounds::RiskSpec;
use crate::error::{Error, Result};
use crate::geometry::{self, Polytope};
use crate::milp::MilpOptions;
use crate::planner::{
    plan, ClusteringConfig, GeometryConfig, LtvModel, Method, ObjectiveSpec, PlanRequest,
    PlanResult,
};
use crate::prediction::{split_fresh, GeneratorSpec, PredictionSet};
use crate::rng::{purpose, CounterRng};
use serde::{Deserialize, Serialize};

/// Slack for the vertex-containment cover check, absorbing rounding in the
/// cover construction.
const COVER_TOL: f64 = 1e-9;

/// First fresh sample found colliding with the plan. `sample` and `t` are
/// 1-based (matching sample files), `ov` is 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub sample: usize,
    pub t: usize,
    pub ov: usize,
}

/// Outcome of checking one plan against `fresh_samples` fresh forecasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    /// Fresh-sample count `M`.
    pub fresh_samples: usize,
    /// Samples whose keep-out set strictly contains the planned output at
    /// some (step, vehicle).
    pub violations: usize,
    /// Exactly `violations / fresh_samples`.
    pub violation_fraction: f64,
    pub first_witness: Option<Witness>,
}

/// Cover-failure tally for one planned cluster: fresh samples assigned to
/// this cluster whose keep-out set escapes the cluster's cover polytope at
/// some step. The fraction is over **all** fresh samples, so the
/// per-cluster fractions add up to the bound on the plan's violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCoverViolation {
    /// Vehicle index (0-based).
    pub ov: usize,
    /// Cluster id (1-based).
    pub cluster: usize,
    pub count: usize,
    pub fraction: f64,
}

/// Cover-failure tallies for every planned cluster of a cluster-method
/// plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverReport {
    pub fresh_samples: usize,
    pub per_cluster: Vec<ClusterCoverViolation>,
    /// Sum of the per-cluster fractions: the empirical upper bound on the
    /// plan's violation fraction.
    pub total_fraction: f64,
}

/// Per-sample collision test: the first (t, ov) where the planned output is
/// strictly inside the sample's keep-out set, if any.
fn first_collision(
    plan: &PlanResult,
    fresh: &PredictionSet,
    i: usize,
) -> Result<Option<(usize, usize)>> {
    for t in 1..=plan.horizon {
        let y = [plan.outputs[t - 1][0], plan.outputs[t - 1][1]];
        for o in 0..fresh.num_ovs {
            let poly = geometry::obstacle_polytope(
                fresh.state(i, t, o),
                plan.geometry.halfspaces,
                plan.geometry.inflation,
            )?;
            if geometry::contains(&poly, y, true) {
                return Ok(Some((t, o)));
            }
        }
    }
    Ok(None)
}

#[cfg(feature = "parallel")]
fn collisions(plan: &PlanResult, fresh: &PredictionSet) -> Result<Vec<Option<(usize, usize)>>> {
    use rayon::prelude::*;
    (0..fresh.num_samples)
        .into_par_iter()
        .map(|i| first_collision(plan, fresh, i))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn collisions(plan: &PlanResult, fresh: &PredictionSet) -> Result<Vec<Option<(usize, usize)>>> {
    (0..fresh.num_samples)
        .map(|i| first_collision(plan, fresh, i))
        .collect()
}

/// Counts fresh samples whose keep-out set strictly contains the planned
/// output at some (step, vehicle). The fresh set must be drawn
/// independently of the planning samples for the fraction to estimate the
/// true violation probability. Samples are scanned in parallel when the
/// `parallel` feature is on; the report is identical either way.
pub fn empirical_violation(plan: &PlanResult, fresh: &PredictionSet) -> Result<ViolationReport> {
    fresh.validate()?;
    if fresh.horizon != plan.horizon {
        return Err(Error::HorizonMismatch(format!(
            "fresh samples have horizon {}, the plan has {}",
            fresh.horizon, plan.horizon
        )));
    }
    if fresh.num_samples == 0 {
        return Err(Error::InvalidArgument(
            "violation estimation needs at least one fresh sample".into(),
        ));
    }
    let hits = collisions(plan, fresh)?;
    let mut violations = 0;
    let mut first_witness = None;
    for (i, hit) in hits.iter().enumerate() {
        if let Some((t, o)) = hit {
            violations += 1;
            if first_witness.is_none() {
                first_witness = Some(Witness {
                    sample: i + 1,
                    t: *t,
                    ov: *o,
                });
            }
        }
    }
    Ok(ViolationReport {
        fresh_samples: fresh.num_samples,
        violations,
        violation_fraction: violations as f64 / fresh.num_samples as f64,
        first_witness,
    })
}

/// Per-(vehicle, cluster) step-indexed cover lookup rebuilt from a plan's
/// polytope list.
fn cover_lookup<'p>(plan: &'p PlanResult) -> Result<Vec<Vec<Vec<&'p Polytope>>>> {
    let mut cover: Vec<Vec<Vec<Option<&Polytope>>>> = plan
        .ov_clusters
        .iter()
        .map(|c| vec![vec![None; plan.horizon]; c.centroids.len()])
        .collect();
    for tp in &plan.polytopes {
        let slot = cover
            .get_mut(tp.ov)
            .and_then(|per_k| per_k.get_mut(tp.cluster.wrapping_sub(1)))
            .and_then(|per_t| per_t.get_mut(tp.t.wrapping_sub(1)))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "plan lists a polytope for vehicle {}, cluster {}, step {} outside \
                     its own clustering",
                    tp.ov, tp.cluster, tp.t
                ))
            })?;
        *slot = Some(&tp.polytope);
    }
    cover
        .into_iter()
        .map(|per_k| {
            per_k
                .into_iter()
                .map(|per_t| {
                    per_t
                        .into_iter()
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| {
                            Error::InvalidArgument(
                                "plan is missing a cover polytope for some (vehicle, \
                                 cluster, step)"
                                    .into(),
                            )
                        })
                })
                .collect()
        })
        .collect()
}

/// Whether `fresh` sample `i`'s keep-out set stays inside its assigned
/// cover for every step of every vehicle; returns the per-vehicle assigned
/// clusters and the cover verdict.
fn sample_cover_check(
    plan: &PlanResult,
    cover: &[Vec<Vec<&Polytope>>],
    fresh: &PredictionSet,
    i: usize,
) -> Result<Vec<(usize, bool)>> {
    let labels = fresh.labels.as_ref();
    let mut out = Vec::with_capacity(fresh.num_ovs);
    for o in 0..fresh.num_ovs {
        let final_state = fresh.state(i, fresh.horizon, o);
        let label = labels.map(|l| l[i * fresh.num_ovs + o]);
        let k = plan.ov_clusters[o].assign([final_state.x, final_state.y], label);
        let mut covered = true;
        'steps: for t in 1..=fresh.horizon {
            let verts =
                geometry::obstacle_vertices(fresh.state(i, t, o), plan.geometry.inflation)?;
            let poly = cover[o][k][t - 1];
            for v in &verts.points {
                for row in &poly.rows {
                    if row.normal[0] * v[0] + row.normal[1] * v[1] > row.offset + COVER_TOL {
                        covered = false;
                        break 'steps;
                    }
                }
            }
        }
        out.push((k, covered));
    }
    Ok(out)
}

/// Tallies, for a cluster-method plan, how often fresh samples escape their
/// assigned cover polytopes. Sums over clusters bound the plan's true
/// violation: a sample can only collide with the plan if it escapes its
/// cover somewhere, because the plan never enters any cover.
pub fn cluster_cover_violation(plan: &PlanResult, fresh: &PredictionSet) -> Result<CoverReport> {
    fresh.validate()?;
    if plan.method != Method::Clusters {
        return Err(Error::InvalidArgument(
            "cover-violation tallies only apply to cluster-method plans".into(),
        ));
    }
    if fresh.horizon != plan.horizon {
        return Err(Error::HorizonMismatch(format!(
            "fresh samples have horizon {}, the plan has {}",
            fresh.horizon, plan.horizon
        )));
    }
    if fresh.num_ovs != plan.ov_clusters.len() {
        return Err(Error::DimensionMismatch(format!(
            "fresh samples describe {} vehicles, the plan clustered {}",
            fresh.num_ovs,
            plan.ov_clusters.len()
        )));
    }
    if fresh.num_samples == 0 {
        return Err(Error::InvalidArgument(
            "cover-violation tallies need at least one fresh sample".into(),
        ));
    }
    let cover = cover_lookup(plan)?;
    let mut counts: Vec<Vec<usize>> = cover.iter().map(|per_k| vec![0; per_k.len()]).collect();
    let verdicts = cover_verdicts(plan, &cover, fresh)?;
    for per_ov in &verdicts {
        for (o, &(k, covered)) in per_ov.iter().enumerate() {
            if !covered {
                counts[o][k] += 1;
            }
        }
    }
    let m = fresh.num_samples as f64;
    let mut per_cluster = Vec::new();
    let mut total = 0.0;
    for (o, per_k) in counts.iter().enumerate() {
        for (k, &count) in per_k.iter().enumerate() {
            let fraction = count as f64 / m;
            total += fraction;
            per_cluster.push(ClusterCoverViolation {
                ov: o,
                cluster: k + 1,
                count,
                fraction,
            });
        }
    }
    Ok(CoverReport {
        fresh_samples: fresh.num_samples,
        per_cluster,
        total_fraction: total,
    })
}

#[cfg(feature = "parallel")]
fn cover_verdicts(
    plan: &PlanResult,
    cover: &[Vec<Vec<&Polytope>>],
    fresh: &PredictionSet,
) -> Result<Vec<Vec<(usize, bool)>>> {
    use rayon::prelude::*;
    (0..fresh.num_samples)
        .into_par_iter()
        .map(|i| sample_cover_check(plan, cover, fresh, i))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn cover_verdicts(
    plan: &PlanResult,
    cover: &[Vec<Vec<&Polytope>>],
    fresh: &PredictionSet,
) -> Result<Vec<Vec<(usize, bool)>>> {
    (0..fresh.num_samples)
        .map(|i| sample_cover_check(plan, cover, fresh, i))
        .collect()
}

// ---------------------------------------------------------------------------
// Monte-Carlo certification
// ---------------------------------------------------------------------------

/// One full pipeline configuration to re-run under independent draws.
pub struct CertifyRequest<'a> {
    pub model: &'a LtvModel,
    pub objective: &'a ObjectiveSpec,
    /// Forecast distribution; its seed is re-derived per run so draws are
    /// independent across runs and between planning and validation.
    pub generator: &'a GeneratorSpec,
    /// Planning samples drawn per run.
    pub n_plan: usize,
    /// Fresh samples drawn per run for the violation estimate.
    pub n_fresh: usize,
    pub risk: RiskSpec,
    pub method: Method,
    pub clustering: &'a ClusteringConfig,
    pub geometry: GeometryConfig,
    pub allocation: Option<Allocation>,
    pub milp_options: Option<MilpOptions>,
    pub runs: usize,
}

/// One certification run's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Run number (1-based).
    pub run: usize,
    /// `None` when this run's program was infeasible.
    pub violation: Option<ViolationReport>,
    /// Cluster method only: summed per-cluster cover-failure fraction.
    pub cover_total_fraction: Option<f64>,
    pub objective: Option<f64>,
}

/// Aggregate of `runs` independent pipeline executions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub runs: usize,
    pub feasible_runs: usize,
    pub infeasible_runs: usize,
    pub epsilon: f64,
    pub beta: f64,
    /// Violation fractions of the feasible runs, in run order.
    pub fractions: Vec<f64>,
    /// Feasible runs whose violation fraction exceeds epsilon.
    pub exceed_count: usize,
    /// `exceed_count / feasible_runs` (0 when no run was feasible).
    pub exceed_fraction: f64,
    /// Cluster method: whether every feasible run satisfied
    /// `violation fraction <= summed cover-failure fraction`.
    pub cover_bound_held: bool,
    pub records: Vec<RunRecord>,
}

/// Re-derives the generator with a run-specific seed.
fn reseed(spec: &GeneratorSpec, run: usize) -> GeneratorSpec {
    let mut out = spec.clone();
    out.seed = CounterRng::from_key(&[spec.seed, purpose::CERTIFY_RUN, run as u64]).next_u64();
    out
}

/// Runs the full pipeline `runs` times on independent draws and tallies how
/// often the planned trajectory's empirical violation exceeds the risk
/// level. Infeasible runs produce no trajectory and are tallied separately.
pub fn certify(req: &CertifyRequest) -> Result<ConfidenceReport> {
    if req.runs == 0 {
        return Err(Error::InvalidArgument(
            "certification needs at least one run".into(),
        ));
    }
    if req.n_plan == 0 || req.n_fresh == 0 {
        return Err(Error::InvalidArgument(
            "certification needs positive planning and fresh sample counts".into(),
        ));
    }
    let mut records = Vec::with_capacity(req.runs);
    let mut fractions = Vec::new();
    let mut exceed_count = 0;
    let mut infeasible_runs = 0;
    let mut cover_bound_held = true;
    for run in 1..=req.runs {
        let spec = reseed(req.generator, run);
        let (plan_set, fresh) = split_fresh(&spec, req.n_plan, req.n_fresh)?;
        let request = PlanRequest {
            model: req.model,
            objective: req.objective,
            predictions: &plan_set,
            risk: req.risk,
            method: req.method,
            clustering: req.clustering,
            geometry: req.geometry,
            allocation: req.allocation.clone(),
            milp_options: req.milp_options,
        };
        match plan(&request) {
            Ok(result) => {
                let violation = empirical_violation(&result, &fresh)?;
                let cover_total = if req.method == Method::Clusters {
                    let cover = cluster_cover_violation(&result, &fresh)?;
                    if violation.violation_fraction > cover.total_fraction {
                        cover_bound_held = false;
                    }
                    Some(cover.total_fraction)
                } else {
                    None
                };
                if violation.violation_fraction > req.risk.epsilon {
                    exceed_count += 1;
                }
                fractions.push(violation.violation_fraction);
                records.push(RunRecord {
                    run,
                    violation: Some(violation),
                    cover_total_fraction: cover_total,
                    objective: Some(result.objective),
                });
            }
            Err(Error::Infeasible { .. }) => {
                infeasible_runs += 1;
                records.push(RunRecord {
                    run,
                    violation: None,
                    cover_total_fraction: None,
                    objective: None,
                });
            }
            Err(other) => return Err(other),
        }
    }
    let feasible_runs = req.runs - infeasible_runs;
    Ok(ConfidenceReport {
        runs: req.runs,
        feasible_runs,
        infeasible_runs,
        epsilon: req.risk.epsilon,
        beta: req.risk.beta,
        exceed_fraction: if feasible_runs == 0 {
            0.0
        } else {
            exceed_count as f64 / feasible_runs as f64
        },
        exceed_count,
        fractions,
        cover_bound_held,
        records,
    })
}
