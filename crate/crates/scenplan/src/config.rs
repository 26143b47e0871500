//! JSON experiment configuration and the file-level pipeline entry points.
//!
//! A [`ScenarioConfig`] describes one planning experiment completely: the
//! vehicle model, the objective, the risk budget and its allocation, where
//! forecast samples come from (a built-in generator or a sample file), the
//! chance-constraint reduction to use, and which artifact files to write.
//! [`run_plan`], [`run_validate`], and [`run_certify`] execute a loaded
//! config end to end.
//!
//! Configs are JSON with no unknown fields. Loading fills every default, so
//! load -> save -> load is a fixed point and the saved form is the
//! normalized one.

use crate::bounds::{allocate_with, min_samples, Allocation, BoundQuery, RiskSpec};
use crate::error::{Error, Result};
use crate::milp::MilpOptions;
use crate::planner::{
    double_integrator, plan, ClusterStrategy, ClusteringConfig, GeometryConfig, LtvModel, Method,
    ObjectiveSpec, PlanRequest, PlanResult,
};
use crate::prediction::{
    generate_stream, load_samples, GeneratorKind, GeneratorSpec, PredictionSet,
};
use crate::rng::purpose;
use crate::validation::{certify, empirical_violation, CertifyRequest, ConfidenceReport};
use serde::{Deserialize, Serialize};
use std::path::Path;

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

/// Planar double-integrator model parameters plus optional box overrides.
/// The overrides replace the derived reachable-set boxes coordinate-wise
/// and are how lower-dimensional problems are embedded (pin a coordinate by
/// giving it a zero-width box).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dt: f64,
    pub horizon: usize,
    /// Initial state `[px, py, vx, vy]`.
    pub x0: [f64; 4],
    pub speed_bound: f64,
    pub accel_bound: f64,
    #[serde(default)]
    pub state_lower: Option<Vec<f64>>,
    #[serde(default)]
    pub state_upper: Option<Vec<f64>>,
    #[serde(default)]
    pub input_lower: Option<Vec<f64>>,
    #[serde(default)]
    pub input_upper: Option<Vec<f64>>,
    #[serde(default)]
    pub output_lower: Option<Vec<f64>>,
    #[serde(default)]
    pub output_upper: Option<Vec<f64>>,
}

impl ModelConfig {
    pub fn build(&self) -> Result<LtvModel> {
        let mut model = double_integrator(
            self.dt,
            self.horizon,
            self.speed_bound,
            self.accel_bound,
            self.x0,
        )?;
        let overrides = [
            (&self.state_lower, &mut model.state_lower),
            (&self.state_upper, &mut model.state_upper),
            (&self.input_lower, &mut model.input_lower),
            (&self.input_upper, &mut model.input_upper),
            (&self.output_lower, &mut model.output_lower),
            (&self.output_upper, &mut model.output_upper),
        ];
        for (src, dst) in overrides {
            if let Some(v) = src {
                if v.len() != dst.len() {
                    return Err(Error::Config(format!(
                        "model bound override has {} coordinates, expected {}",
                        v.len(),
                        dst.len()
                    )));
                }
                dst.clone_from(v);
            }
        }
        model.validate()?;
        Ok(model)
    }
}

/// How the total risk budget is split across clusters (cluster method).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AllocationStrategy {
    /// Equal share per cluster.
    #[default]
    Uniform,
    /// Proportional to the given positive weights, flattened vehicle-major
    /// then cluster-id-ascending. Only ratios matter. A common choice is
    /// the inverse mode probability, spending more budget on rare modes.
    Weighted { weights: Vec<f64> },
}

/// Risk budget and certificate sizing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    pub epsilon: f64,
    pub beta: f64,
    #[serde(default)]
    pub allocation: AllocationStrategy,
    /// Override for the certificate's continuous-variable count. Defaults:
    /// scenario method counts the input trajectory (`horizon * n_u`);
    /// cluster method counts the per-cluster cover offsets
    /// (`halfspaces * horizon`). Set it when the embedded program has
    /// pinned coordinates and the intrinsic dimension is smaller.
    #[serde(default)]
    pub n_continuous: Option<u64>,
    /// Override for the certificate's binary count (scenario method;
    /// default `halfspaces * horizon * num_ovs`).
    #[serde(default)]
    pub n_binary: Option<u64>,
}

impl RiskConfig {
    pub fn spec(&self) -> Result<RiskSpec> {
        RiskSpec::new(self.epsilon, self.beta)
    }
}

/// Where forecast samples come from.
// No deny_unknown_fields here: it cannot coexist with the flattened
// generator payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum PredictionSource {
    /// Draw from a built-in generator. `samples`, when set, fixes the
    /// planning draw size; it must still meet the certificate requirement.
    Generator {
        #[serde(flatten)]
        spec: GeneratorSpec,
        #[serde(default)]
        samples: Option<usize>,
    },
    /// Load a prediction file (see the sample-file grammar in the
    /// prediction module). The file must hold at least the required sample
    /// count.
    File { path: String },
}

/// Artifact paths; every entry is optional and skipped when absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Full plan (JSON, with an isolated timestamp field).
    #[serde(default)]
    pub plan: Option<String>,
    /// Trajectory table (CSV: t, x, y, vx, vy, ux, uy).
    #[serde(default)]
    pub trajectory: Option<String>,
    /// Enforced keep-out polytopes (CSV, cluster method).
    #[serde(default)]
    pub polytopes: Option<String>,
    /// Violation / certification report (JSON).
    #[serde(default)]
    pub report: Option<String>,
}

/// Branch-and-bound overrides.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default)]
    pub node_budget: Option<usize>,
    #[serde(default)]
    pub gap_tol: Option<f64>,
    #[serde(default)]
    pub int_tol: Option<f64>,
}

impl SolverConfig {
    pub fn options(&self) -> MilpOptions {
        let mut o = MilpOptions::default();
        if let Some(v) = self.node_budget {
            o.node_budget = v;
        }
        if let Some(v) = self.gap_tol {
            o.gap_tol = v;
        }
        if let Some(v) = self.int_tol {
            o.int_tol = v;
        }
        o
    }
}

/// One complete planning experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub objective: ObjectiveSpec,
    pub risk: RiskConfig,
    pub prediction: PredictionSource,
    pub method: Method,
    /// Required for the cluster method; ignored by the scenario method.
    #[serde(default)]
    pub clustering: Option<ClusteringConfig>,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl ScenarioConfig {
    /// Structural validation beyond what serde enforces; `base` resolves
    /// relative file references (usually the config file's directory).
    pub fn validate(&self, base: &Path) -> Result<()> {
        let model = self.model.build()?;
        self.objective.validate(&model)?;
        self.risk.spec()?;
        if self.geometry.halfspaces < 3 {
            return Err(Error::Config(format!(
                "keep-out polytopes need at least 3 halfspaces, got {}",
                self.geometry.halfspaces
            )));
        }
        if !(self.geometry.inflation >= 0.0) || !(self.geometry.clearance >= 0.0) {
            return Err(Error::Config(
                "inflation and clearance must be nonnegative".into(),
            ));
        }
        match &self.prediction {
            PredictionSource::Generator { spec, samples } => {
                spec.validate()?;
                if samples == &Some(0) {
                    return Err(Error::Config(
                        "prediction.samples must be positive when set".into(),
                    ));
                }
            }
            PredictionSource::File { path } => {
                let resolved = base.join(path);
                if !resolved.is_file() {
                    return Err(Error::Config(format!(
                        "prediction file `{}` does not exist",
                        resolved.display()
                    )));
                }
            }
        }
        if self.method == Method::Clusters && self.clustering.is_none() {
            return Err(Error::Config(
                "the cluster method needs a `clustering` section".into(),
            ));
        }
        if let (AllocationStrategy::Weighted { weights }, _) = (&self.risk.allocation, ()) {
            if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
                return Err(Error::Config(
                    "allocation weights must be positive and finite".into(),
                ));
            }
        }
        Ok(())
    }

    fn clustering_or_default(&self) -> ClusteringConfig {
        self.clustering.clone().unwrap_or(ClusteringConfig {
            strategy: ClusterStrategy::Labels,
            seed: 0,
            merge_threshold: None,
        })
    }
}

/// Reads and validates a config file. File references inside the config
/// resolve relative to the config file's directory.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let config: ScenarioConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    config.validate(base)?;
    Ok(config)
}

/// Serializes a config in its normalized (all defaults explicit) form.
pub fn render_config(config: &ScenarioConfig) -> String {
    let mut s = serde_json::to_string_pretty(config).expect("config serialization cannot fail");
    s.push('\n');
    s
}

/// Writes the normalized form of a config.
pub fn save_config(config: &ScenarioConfig, path: &Path) -> Result<()> {
    std::fs::write(path, render_config(config))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Sizing
// ---------------------------------------------------------------------------

/// Sample requirement for a config: the scenario method's single count, or
/// the cluster method's per-cluster allocation and the joint draw implied
/// by it (clusters share one joint sample set; each vehicle needs the sum
/// of its clusters' counts, and one draw serves all vehicles, so the joint
/// size is the max over vehicles).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRequirement {
    pub required: u64,
    pub allocation: Option<Allocation>,
}

/// Cluster count per vehicle before any samples are drawn. K-means counts
/// come from the config; label counts come from the generator's mode table
/// or the loaded file's labels, after applying the merge threshold.
fn planned_cluster_counts(
    config: &ScenarioConfig,
    loaded: Option<&PredictionSet>,
) -> Result<Vec<usize>> {
    let clustering = config.clustering.as_ref().ok_or_else(|| {
        Error::Config("the cluster method needs a `clustering` section".into())
    })?;
    match &clustering.strategy {
        ClusterStrategy::Kmeans { clusters_per_ov } => {
            if clusters_per_ov.is_empty() || clusters_per_ov.iter().any(|&k| k == 0) {
                return Err(Error::Config(
                    "clusters_per_ov must list a positive count per vehicle".into(),
                ));
            }
            Ok(clusters_per_ov.clone())
        }
        ClusterStrategy::Labels => {
            let threshold = clustering.merge_threshold.unwrap_or(0.0);
            match (&config.prediction, loaded) {
                (PredictionSource::Generator { spec, .. }, _) => {
                    let probs: Vec<f64> = match &spec.kind {
                        GeneratorKind::UniformMixture1d { weights, .. } => weights.clone(),
                        GeneratorKind::AccelBrakeOv { modes, .. } => {
                            modes.iter().map(|m| m.probability).collect()
                        }
                    };
                    let retained = probs.iter().filter(|&&p| p >= threshold).count();
                    if retained == 0 {
                        return Err(Error::Config(format!(
                            "no generator mode reaches the merge threshold {threshold}"
                        )));
                    }
                    Ok(vec![retained; spec.num_ovs()])
                }
                (PredictionSource::File { .. }, Some(preds)) => {
                    let mut counts = Vec::with_capacity(preds.num_ovs);
                    for o in 0..preds.num_ovs {
                        let labels = preds.labels_for(o).ok_or_else(|| {
                            Error::Config(
                                "label-based clustering requires a labeled sample file".into(),
                            )
                        })?;
                        let labels = match (
                            clustering.merge_threshold,
                            preds.mode_probs.as_ref().map(|p| &p[o]),
                        ) {
                            (Some(th), Some(probs)) => {
                                let features = preds.final_positions(o);
                                crate::clustering::merge_rare_modes(
                                    &labels, probs, &features, th,
                                )?
                                .0
                            }
                            _ => labels,
                        };
                        let mut uniq = labels;
                        uniq.sort_unstable();
                        uniq.dedup();
                        counts.push(uniq.len());
                    }
                    Ok(counts)
                }
                (PredictionSource::File { .. }, None) => Err(Error::Config(
                    "internal: file-source cluster counts need the loaded samples".into(),
                )),
            }
        }
    }
}

/// Computes the certificate-driven sample requirement of a config.
/// `loaded` must be the file contents when the prediction source is a file
/// and the cluster counts depend on its labels.
pub fn sample_requirement(
    config: &ScenarioConfig,
    loaded: Option<&PredictionSet>,
) -> Result<SampleRequirement> {
    let risk = config.risk.spec()?;
    let model = config.model.build()?;
    match config.method {
        Method::Scenario => {
            let num_ovs = match (&config.prediction, loaded) {
                (PredictionSource::Generator { spec, .. }, _) => spec.num_ovs(),
                (_, Some(preds)) => preds.num_ovs,
                (PredictionSource::File { .. }, None) => 1,
            };
            let n_continuous = config
                .risk
                .n_continuous
                .unwrap_or((model.horizon * model.n_u) as u64);
            let n_binary = config
                .risk
                .n_binary
                .unwrap_or((config.geometry.halfspaces * model.horizon * num_ovs) as u64);
            let required = min_samples(&BoundQuery::new(
                risk.epsilon,
                risk.beta,
                n_continuous,
                n_binary,
            )?)?;
            Ok(SampleRequirement {
                required,
                allocation: None,
            })
        }
        Method::Clusters => {
            let counts = planned_cluster_counts(config, loaded)?;
            let n_continuous = config
                .risk
                .n_continuous
                .unwrap_or((config.geometry.halfspaces * model.horizon) as u64);
            let weights = match &config.risk.allocation {
                AllocationStrategy::Uniform => None,
                AllocationStrategy::Weighted { weights } => Some(weights.as_slice()),
            };
            let allocation = allocate_with(&risk, &counts, weights, n_continuous)?;
            Ok(SampleRequirement {
                required: allocation.joint_samples(),
                allocation: Some(allocation),
            })
        }
    }
}

/// Obtains the planning sample set for a config: generates (on the
/// planning stream) or loads, checks the certificate requirement, and
/// returns the set together with the requirement.
pub fn resolve_predictions(
    config: &ScenarioConfig,
    base: &Path,
) -> Result<(PredictionSet, SampleRequirement)> {
    match &config.prediction {
        PredictionSource::Generator { spec, samples } => {
            let requirement = sample_requirement(config, None)?;
            let n = samples.unwrap_or(requirement.required as usize);
            if (n as u64) < requirement.required {
                return Err(Error::Config(format!(
                    "prediction.samples = {n} is below the certificate requirement {}",
                    requirement.required
                )));
            }
            let preds = generate_stream(spec, n, purpose::PLAN)?;
            Ok((preds, requirement))
        }
        PredictionSource::File { path } => {
            let preds = load_samples(&base.join(path))?;
            let requirement = sample_requirement(config, Some(&preds))?;
            if (preds.num_samples as u64) < requirement.required {
                return Err(Error::Config(format!(
                    "sample file holds {} samples, below the certificate requirement {}",
                    preds.num_samples, requirement.required
                )));
            }
            Ok((preds, requirement))
        }
    }
}

// ---------------------------------------------------------------------------
// Pipeline entry points
// ---------------------------------------------------------------------------

/// A plan as written to disk: the deterministic payload plus one isolated
/// timestamp field, so reruns differ in exactly that line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub generated_at_unix_s: u64,
    pub plan: PlanResult,
}

/// Result of [`run_plan`]: the solved plan plus sizing provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub result: PlanResult,
    pub requirement: SampleRequirement,
    pub samples_drawn: usize,
}

/// Runs a config end to end (resolve samples, plan, self-check) and writes
/// the configured artifacts relative to `base`.
pub fn run_plan(config: &ScenarioConfig, base: &Path) -> Result<PlanOutcome> {
    let model = config.model.build()?;
    let (preds, requirement) = resolve_predictions(config, base)?;
    if preds.horizon != model.horizon {
        return Err(Error::HorizonMismatch(format!(
            "prediction horizon {} differs from the model horizon {}",
            preds.horizon, model.horizon
        )));
    }
    let clustering = config.clustering_or_default();
    let request = PlanRequest {
        model: &model,
        objective: &config.objective,
        predictions: &preds,
        risk: config.risk.spec()?,
        method: config.method,
        clustering: &clustering,
        geometry: config.geometry,
        allocation: requirement.allocation.clone(),
        milp_options: Some(config.solver.options()),
    };
    let result = plan(&request)?;
    if let Some(path) = &config.output.plan {
        write_plan_file(&result, &base.join(path))?;
    }
    if let Some(path) = &config.output.trajectory {
        let resolved = base.join(path);
        std::fs::write(&resolved, trajectory_csv(&result))
            .map_err(|e| Error::io(resolved.display().to_string(), e))?;
    }
    if let Some(path) = &config.output.polytopes {
        let resolved = base.join(path);
        std::fs::write(&resolved, polytope_csv(&result))
            .map_err(|e| Error::io(resolved.display().to_string(), e))?;
    }
    Ok(PlanOutcome {
        samples_drawn: preds.num_samples,
        result,
        requirement,
    })
}

/// Draws a fresh validation set per the config's generator (on the
/// validation stream, disjoint from planning) and estimates the plan's
/// violation. `samples` overrides the draw size; file sources use the whole
/// file and reject an override.
pub fn run_validate(
    config: &ScenarioConfig,
    plan: &PlanResult,
    samples: Option<usize>,
    base: &Path,
) -> Result<crate::validation::ViolationReport> {
    let fresh = match &config.prediction {
        PredictionSource::Generator { spec, .. } => {
            let m = samples.unwrap_or(100_000);
            if m == 0 {
                return Err(Error::InvalidArgument(
                    "validation needs at least one fresh sample".into(),
                ));
            }
            generate_stream(spec, m, purpose::VALIDATE)?
        }
        PredictionSource::File { path } => {
            if samples.is_some() {
                return Err(Error::InvalidArgument(
                    "a file-sourced config validates against the whole file; drop the \
                     sample-count override"
                        .into(),
                ));
            }
            load_samples(&base.join(path))?
        }
    };
    empirical_violation(plan, &fresh)
}

/// Re-runs the configured pipeline `runs` times on independent draws (see
/// the validation module) with `n_fresh` fresh samples per run. Only
/// generator-sourced configs can be certified: a fixed file cannot supply
/// independent draws.
pub fn run_certify(
    config: &ScenarioConfig,
    runs: usize,
    n_fresh: usize,
) -> Result<ConfidenceReport> {
    let PredictionSource::Generator { spec, samples } = &config.prediction else {
        return Err(Error::Config(
            "certification needs a generator-sourced config (a fixed sample file \
             cannot supply independent draws)"
                .into(),
        ));
    };
    let model = config.model.build()?;
    let requirement = sample_requirement(config, None)?;
    let n_plan = samples.unwrap_or(requirement.required as usize);
    if (n_plan as u64) < requirement.required {
        return Err(Error::Config(format!(
            "prediction.samples = {n_plan} is below the certificate requirement {}",
            requirement.required
        )));
    }
    let clustering = config.clustering_or_default();
    let request = CertifyRequest {
        model: &model,
        objective: &config.objective,
        generator: spec,
        n_plan,
        n_fresh,
        risk: config.risk.spec()?,
        method: config.method,
        clustering: &clustering,
        geometry: config.geometry,
        allocation: requirement.allocation.clone(),
        milp_options: Some(config.solver.options()),
        runs,
    };
    certify(&request)
}

// ---------------------------------------------------------------------------
// Artifact rendering
// ---------------------------------------------------------------------------

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes a plan JSON file with the timestamp isolated in its own field.
pub fn write_plan_file(plan: &PlanResult, path: &Path) -> Result<()> {
    let file = PlanFile {
        generated_at_unix_s: unix_now(),
        plan: plan.clone(),
    };
    let mut text =
        serde_json::to_string_pretty(&file).expect("plan serialization cannot fail");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a plan JSON file.
pub fn load_plan_file(path: &Path) -> Result<PlanFile> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Plot-ready trajectory table: one row per step with position, velocity,
/// and the input applied over the step ending at `t`. Assumes the planar
/// double-integrator state layout `[px, py, vx, vy]`.
pub fn trajectory_csv(plan: &PlanResult) -> String {
    let mut out = String::from("t,x,y,vx,vy,ux,uy\n");
    for t in 1..=plan.horizon {
        let y = &plan.outputs[t - 1];
        let x = &plan.states[t - 1];
        let u = &plan.inputs[t - 1];
        let (vx, vy) = if x.len() >= 4 { (x[2], x[3]) } else { (0.0, 0.0) };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            t, y[0], y[1], vx, vy, u[0], u[1]
        ));
    }
    out
}

/// Enforced keep-out polytopes, one row per halfspace (cluster method;
/// empty table for scenario plans, whose keep-outs are per-sample).
pub fn polytope_csv(plan: &PlanResult) -> String {
    let mut out = String::from("t,ov,cluster,halfspace,normal_x,normal_y,offset\n");
    for tp in &plan.polytopes {
        for (j, row) in tp.polytope.rows.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                tp.t, tp.ov, tp.cluster, j, row.normal[0], row.normal[1], row.offset
            ));
        }
    }
    out
}
