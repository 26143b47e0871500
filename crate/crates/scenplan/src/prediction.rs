//! Forecast sample sets: synthetic generators and file ingestion.
//!
//! A [`PredictionSet`] holds `N` forecast samples, each describing every
//! other vehicle's pose at every future step `t ∈ 1..=T`. Samples may carry
//! a per-(sample, vehicle) mode label and per-(vehicle, label) mode
//! probabilities, which the clustering stage can pass through instead of
//! running k-means.
//!
//! Two synthetic generators are built in:
//!
//! * `uniform-mixture-1d` — scalar obstacle centers drawn from a weighted
//!   mixture of disjoint intervals, embedded on the x-axis as one
//!   single-step obstacle (the classic bimodal toy problem).
//! * `accel-brake-ov` — one vehicle rolling out constant acceleration drawn
//!   per sample from a small set of modes (e.g. brake hard vs. keep
//!   accelerating), plus Gaussian acceleration noise; speed is clamped at
//!   zero (no reversing) and optionally at a cap.
//!
//! Generation is keyed by `(seed, stream, sample index)` through the
//! counter-based RNG, so each sample is an independent substream: parallel
//! and sequential generation produce bit-identical sets, and planning
//! streams never overlap validation streams.

use crate::error::{Error, Result};
use crate::geometry::OvState;
use crate::rng::{purpose, CounterRng};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Obstacle footprint used when embedding scalar mixture draws on the
/// x-axis: the keep-out interval around a center `X` is `(X - 0.1, X + 0.1)`.
const MIXTURE_1D_LENGTH: f64 = 0.2;
const MIXTURE_1D_WIDTH: f64 = 1.0;

/// Dense forecast set: `num_samples x horizon x num_ovs` vehicle states.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    /// Steps per sample; states exist for `t ∈ 1..=horizon`.
    pub horizon: usize,
    pub num_ovs: usize,
    pub num_samples: usize,
    /// Flattened `(sample, t, ov)` in row-major order.
    states: Vec<OvState>,
    /// Mode label per `(sample, ov)`, flattened, when the forecast source
    /// provides one.
    pub labels: Option<Vec<i64>>,
    /// Per vehicle: mode label -> probability.
    pub mode_probs: Option<Vec<BTreeMap<i64, f64>>>,
}

impl PredictionSet {
    /// Builds a set from flattened `(sample, t, ov)` states, validating all
    /// dimensions.
    pub fn from_states(
        horizon: usize,
        num_ovs: usize,
        states: Vec<OvState>,
        labels: Option<Vec<i64>>,
        mode_probs: Option<Vec<BTreeMap<i64, f64>>>,
    ) -> Result<Self> {
        if horizon == 0 || num_ovs == 0 {
            return Err(Error::InvalidArgument(
                "prediction sets need horizon >= 1 and at least one vehicle".into(),
            ));
        }
        let cell = horizon * num_ovs;
        if states.is_empty() || states.len() % cell != 0 {
            return Err(Error::DimensionMismatch(format!(
                "state count {} is not a positive multiple of horizon x vehicles = {}",
                states.len(),
                cell
            )));
        }
        let set = PredictionSet {
            horizon,
            num_ovs,
            num_samples: states.len() / cell,
            states,
            labels,
            mode_probs,
        };
        set.validate()?;
        Ok(set)
    }

    /// Checks the internal invariants (cell counts, label coverage,
    /// probability tables referencing only known labels).
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::InvalidArgument(
                "prediction set holds no samples".into(),
            ));
        }
        let expect = self.num_samples * self.horizon * self.num_ovs;
        if self.states.len() != expect {
            return Err(Error::DimensionMismatch(format!(
                "expected {} states, found {}",
                expect,
                self.states.len()
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.num_samples * self.num_ovs {
                return Err(Error::DimensionMismatch(format!(
                    "expected {} labels, found {}",
                    self.num_samples * self.num_ovs,
                    labels.len()
                )));
            }
        }
        if let Some(probs) = &self.mode_probs {
            if probs.len() != self.num_ovs {
                return Err(Error::DimensionMismatch(format!(
                    "expected {} mode-probability tables, found {}",
                    self.num_ovs,
                    probs.len()
                )));
            }
            let labels = self.labels.as_ref().ok_or_else(|| {
                Error::InvalidArgument(
                    "mode probabilities require mode labels to be present".into(),
                )
            })?;
            for (o, table) in probs.iter().enumerate() {
                for i in 0..self.num_samples {
                    let l = labels[i * self.num_ovs + o];
                    if !table.contains_key(&l) {
                        return Err(Error::InvalidArgument(format!(
                            "sample {} carries label {} for vehicle {} but the \
                             probability table has no such entry",
                            i + 1,
                            l,
                            o + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// State of vehicle `o` (0-based) in sample `i` (0-based) at step `t`
    /// (1-based).
    #[inline]
    pub fn state(&self, i: usize, t: usize, o: usize) -> &OvState {
        debug_assert!(t >= 1 && t <= self.horizon);
        &self.states[(i * self.horizon + (t - 1)) * self.num_ovs + o]
    }

    /// Mode label of `(sample, vehicle)` when labels are present.
    pub fn label(&self, i: usize, o: usize) -> Option<i64> {
        self.labels.as_ref().map(|l| l[i * self.num_ovs + o])
    }

    /// Labels of every sample for vehicle `o`, when present.
    pub fn labels_for(&self, o: usize) -> Option<Vec<i64>> {
        self.labels
            .as_ref()
            .map(|l| (0..self.num_samples).map(|i| l[i * self.num_ovs + o]).collect())
    }

    /// Final-step centers of vehicle `o` across samples — the clustering
    /// feature (end poses separate maneuver modes most clearly).
    pub fn final_positions(&self, o: usize) -> Vec<[f64; 2]> {
        (0..self.num_samples)
            .map(|i| self.state(i, self.horizon, o).center())
            .collect()
    }
}

/// One mode of the accel-brake generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OvMode {
    /// Constant acceleration applied over the whole horizon (m/s^2).
    pub accel: f64,
    pub probability: f64,
}

/// Distribution family for synthetic forecasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// Scalar centers from a weighted mixture of intervals, embedded on the
    /// x-axis as a single-step, single-vehicle obstacle.
    #[serde(rename = "uniform-mixture-1d")]
    UniformMixture1d {
        /// Disjoint `[low, high]` support intervals.
        intervals: Vec<[f64; 2]>,
        /// One positive weight per interval, summing to 1.
        weights: Vec<f64>,
    },
    /// One vehicle under per-sample constant acceleration with Gaussian
    /// perturbation; speed clamps at zero and (optionally) at `speed_cap`.
    AccelBrakeOv {
        start: OvState,
        /// Initial speed along the heading (m/s).
        speed: f64,
        dt: f64,
        horizon: usize,
        modes: Vec<OvMode>,
        #[serde(default)]
        noise_sigma: f64,
        #[serde(default)]
        speed_cap: Option<f64>,
    },
}

/// A generator plus its seed: a pure description of a forecast distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub seed: u64,
    #[serde(flatten)]
    pub kind: GeneratorKind,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            GeneratorKind::UniformMixture1d { intervals, weights } => {
                if intervals.is_empty() || intervals.len() != weights.len() {
                    return Err(Error::InvalidArgument(format!(
                        "need matching non-empty intervals and weights, got {} and {}",
                        intervals.len(),
                        weights.len()
                    )));
                }
                for (k, iv) in intervals.iter().enumerate() {
                    if !(iv[0] < iv[1]) {
                        return Err(Error::InvalidArgument(format!(
                            "interval {} = [{}, {}] is degenerate",
                            k + 1,
                            iv[0],
                            iv[1]
                        )));
                    }
                }
                check_weights(weights)
            }
            GeneratorKind::AccelBrakeOv {
                start,
                speed,
                dt,
                horizon,
                modes,
                noise_sigma,
                speed_cap,
            } => {
                if !(*dt > 0.0) {
                    return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
                }
                if *horizon == 0 {
                    return Err(Error::InvalidArgument("horizon must be at least 1".into()));
                }
                if !(*speed >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "initial speed must be nonnegative, got {speed}"
                    )));
                }
                if !(start.length > 0.0 && start.width > 0.0) {
                    return Err(Error::InvalidArgument(
                        "vehicle footprint must have positive extents".into(),
                    ));
                }
                if !(*noise_sigma >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "noise sigma must be nonnegative, got {noise_sigma}"
                    )));
                }
                if let Some(cap) = speed_cap {
                    if !(*cap >= 0.0) {
                        return Err(Error::InvalidArgument(format!(
                            "speed cap must be nonnegative, got {cap}"
                        )));
                    }
                }
                if modes.is_empty() {
                    return Err(Error::InvalidArgument("need at least one mode".into()));
                }
                let weights: Vec<f64> = modes.iter().map(|m| m.probability).collect();
                check_weights(&weights)
            }
        }
    }

    /// Horizon of the sets this spec generates.
    pub fn horizon(&self) -> usize {
        match &self.kind {
            GeneratorKind::UniformMixture1d { .. } => 1,
            GeneratorKind::AccelBrakeOv { horizon, .. } => *horizon,
        }
    }

    /// Vehicles per sample (both built-in generators describe one).
    pub fn num_ovs(&self) -> usize {
        1
    }

    /// Mode-probability tables this generator implies (labels are always
    /// emitted, so downstream label-based clustering works out of the box).
    fn mode_prob_tables(&self) -> Vec<BTreeMap<i64, f64>> {
        let table: BTreeMap<i64, f64> = match &self.kind {
            GeneratorKind::UniformMixture1d { weights, .. } => weights
                .iter()
                .enumerate()
                .map(|(k, &w)| (k as i64, w))
                .collect(),
            GeneratorKind::AccelBrakeOv { modes, .. } => modes
                .iter()
                .enumerate()
                .map(|(k, m)| (k as i64, m.probability))
                .collect(),
        };
        vec![table]
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(
            "mixture weights must all be positive and finite".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "mixture weights must sum to 1 within 1e-9, got {total}"
        )));
    }
    Ok(())
}

/// Picks an index from cumulative `weights` at uniform draw `u`; the last
/// index absorbs any floating-point shortfall.
fn pick_weighted(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

/// States (flattened `(t, ov)`) and per-vehicle labels of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDraw {
    pub states: Vec<OvState>,
    pub labels: Vec<i64>,
}

/// Draws sample `index` of the substream `(spec.seed, stream, index)`.
/// Pure: any subset of indices can be drawn in any order, on any thread,
/// with identical results.
pub fn generate_one(spec: &GeneratorSpec, stream: u64, index: u64) -> SampleDraw {
    let mut rng = CounterRng::from_key(&[spec.seed, stream, index]);
    match &spec.kind {
        GeneratorKind::UniformMixture1d { intervals, weights } => {
            let k = pick_weighted(weights, rng.uniform());
            let x = rng.uniform_in(intervals[k][0], intervals[k][1]);
            SampleDraw {
                states: vec![OvState::new(x, 0.0, 0.0, MIXTURE_1D_LENGTH, MIXTURE_1D_WIDTH)],
                labels: vec![k as i64],
            }
        }
        GeneratorKind::AccelBrakeOv {
            start,
            speed,
            dt,
            horizon,
            modes,
            noise_sigma,
            speed_cap,
        } => {
            let weights: Vec<f64> = modes.iter().map(|m| m.probability).collect();
            let k = pick_weighted(&weights, rng.uniform());
            let accel = modes[k].accel + noise_sigma * rng.normal();
            let (sin_yaw, cos_yaw) = start.yaw.sin_cos();
            let mut states = Vec::with_capacity(*horizon);
            let mut travel = 0.0;
            let mut v = *speed;
            for _ in 0..*horizon {
                let (ds, v_next) = advance_speed_clamped(v, accel, *dt, *speed_cap);
                travel += ds;
                v = v_next;
                states.push(OvState::new(
                    start.x + travel * cos_yaw,
                    start.y + travel * sin_yaw,
                    start.yaw,
                    start.length,
                    start.width,
                ));
            }
            SampleDraw {
                states,
                labels: vec![k as i64],
            }
        }
    }
}

/// Distance covered and final speed over one step of length `dt` under
/// constant acceleration `a`, clamping speed into `[0, cap]`.
fn advance_speed_clamped(v: f64, a: f64, dt: f64, cap: Option<f64>) -> (f64, f64) {
    let v_end = v + a * dt;
    if a < 0.0 && v_end < 0.0 {
        // Decelerates to rest inside the step and stays there.
        let tau = -v / a;
        (v * tau + 0.5 * a * tau * tau, 0.0)
    } else if let Some(cap) = cap {
        if a > 0.0 && v_end > cap {
            // Hits the cap inside the step and cruises at it.
            let tau = ((cap - v) / a).max(0.0);
            (v * tau + 0.5 * a * tau * tau + cap * (dt - tau), cap)
        } else {
            (v * dt + 0.5 * a * dt * dt, v_end.min(cap))
        }
    } else {
        (v * dt + 0.5 * a * dt * dt, v_end)
    }
}

/// Generates `n` samples on the planning stream.
pub fn generate(spec: &GeneratorSpec, n: usize) -> Result<PredictionSet> {
    generate_stream(spec, n, purpose::PLAN)
}

/// Generates `n` samples on an explicit stream tag (planning, validation,
/// certification runs, ...). Parallel when the `parallel` feature is on;
/// output is identical either way.
pub fn generate_stream(spec: &GeneratorSpec, n: usize, stream: u64) -> Result<PredictionSet> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument(
            "cannot generate an empty prediction set".into(),
        ));
    }
    let draws = draw_all(spec, n, stream);
    let horizon = spec.horizon();
    let num_ovs = spec.num_ovs();
    let mut states = Vec::with_capacity(n * horizon * num_ovs);
    let mut labels = Vec::with_capacity(n * num_ovs);
    for d in draws {
        states.extend_from_slice(&d.states);
        labels.extend_from_slice(&d.labels);
    }
    PredictionSet::from_states(
        horizon,
        num_ovs,
        states,
        Some(labels),
        Some(spec.mode_prob_tables()),
    )
}

#[cfg(feature = "parallel")]
fn draw_all(spec: &GeneratorSpec, n: usize, stream: u64) -> Vec<SampleDraw> {
    use rayon::prelude::*;
    (0..n as u64)
        .into_par_iter()
        .map(|i| generate_one(spec, stream, i))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn draw_all(spec: &GeneratorSpec, n: usize, stream: u64) -> Vec<SampleDraw> {
    (0..n as u64).map(|i| generate_one(spec, stream, i)).collect()
}

/// Generates a planning set and a statistically independent validation set.
/// The two live on disjoint substream tags of the same seed, so no draw is
/// shared no matter the sizes.
pub fn split_fresh(
    spec: &GeneratorSpec,
    n_plan: usize,
    n_validate: usize,
) -> Result<(PredictionSet, PredictionSet)> {
    Ok((
        generate_stream(spec, n_plan, purpose::PLAN)?,
        generate_stream(spec, n_validate, purpose::VALIDATE)?,
    ))
}

// ---------------------------------------------------------------------------
// Sample files
// ---------------------------------------------------------------------------
//
// Grammar (one record per line, `#` comments and blank lines ignored):
//
//   line 1:  {"n": <samples>, "horizon": <steps>, "ovs": <vehicles>}
//   others:  sample_id,ov_id,t,x,y,yaw,length,width[,mode[,mode_prob]]
//
// `sample_id`, `ov_id`, and `t` are 1-based. Every (sample, t, vehicle)
// cell must appear exactly once. `mode` is a per-(sample, vehicle) integer
// label and must agree across the t-records of that pair; `mode_prob` is the
// probability of that label for that vehicle and must agree across records.
// Floats are written with shortest round-trip precision, so save -> load is
// bit-exact.

#[derive(Serialize, Deserialize)]
struct FileHeader {
    n: usize,
    horizon: usize,
    ovs: usize,
}

/// Renders a sample file (see the grammar above).
pub fn render_samples(set: &PredictionSet) -> Result<String> {
    set.validate()?;
    let mut out = String::new();
    let header = FileHeader {
        n: set.num_samples,
        horizon: set.horizon,
        ovs: set.num_ovs,
    };
    out.push_str(&serde_json::to_string(&header).expect("header is serializable"));
    out.push('\n');
    for i in 0..set.num_samples {
        for o in 0..set.num_ovs {
            let label = set.label(i, o);
            let prob = match (&set.mode_probs, label) {
                (Some(tables), Some(l)) => Some(*tables[o].get(&l).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "label {} of vehicle {} has no probability entry",
                        l,
                        o + 1
                    ))
                })?),
                _ => None,
            };
            for t in 1..=set.horizon {
                let s = set.state(i, t, o);
                let _ = write!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    i + 1,
                    o + 1,
                    t,
                    s.x,
                    s.y,
                    s.yaw,
                    s.length,
                    s.width
                );
                if let Some(l) = label {
                    let _ = write!(out, ",{}", l);
                    if let Some(p) = prob {
                        let _ = write!(out, ",{}", p);
                    }
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

pub fn save_samples(set: &PredictionSet, path: &Path) -> Result<()> {
    let text = render_samples(set)?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

const RECORD_FIELDS: [&str; 10] = [
    "sample_id", "ov_id", "t", "x", "y", "yaw", "length", "width", "mode", "mode_prob",
];

/// Parses sample-file text (see the grammar above).
pub fn parse_samples(text: &str) -> Result<PredictionSet> {
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        field: None,
        message: "empty file; expected a JSON header line".into(),
    })?;
    let header: FileHeader = serde_json::from_str(header_line.trim()).map_err(|e| Error::Parse {
        line: 1,
        field: None,
        message: format!("bad JSON header: {e}"),
    })?;
    let (n, horizon, num_ovs) = (header.n, header.horizon, header.ovs);
    if n == 0 || horizon == 0 || num_ovs == 0 {
        return Err(Error::Parse {
            line: 1,
            field: None,
            message: format!(
                "header dimensions must all be positive, got n={n}, horizon={horizon}, ovs={num_ovs}"
            ),
        });
    }
    let mut cells: Vec<Option<OvState>> = vec![None; n * horizon * num_ovs];
    let mut labels: Vec<Option<i64>> = vec![None; n * num_ovs];
    let mut any_label = false;
    let mut probs: Vec<BTreeMap<i64, f64>> = vec![BTreeMap::new(); num_ovs];
    let mut any_prob = false;

    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 8 || fields.len() > 10 {
            return Err(Error::Parse {
                line: line_no,
                field: None,
                message: format!("expected 8-10 comma-separated fields, got {}", fields.len()),
            });
        }
        let int = |pos: usize| -> Result<i64> {
            fields[pos].trim().parse::<i64>().map_err(|e| Error::Parse {
                line: line_no,
                field: Some(RECORD_FIELDS[pos]),
                message: e.to_string(),
            })
        };
        let num = |pos: usize| -> Result<f64> {
            let v: f64 = fields[pos].trim().parse().map_err(
                |e: std::num::ParseFloatError| Error::Parse {
                    line: line_no,
                    field: Some(RECORD_FIELDS[pos]),
                    message: e.to_string(),
                },
            )?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    field: Some(RECORD_FIELDS[pos]),
                    message: format!("value {v} is not finite"),
                });
            }
            Ok(v)
        };
        let in_range = |pos: usize, v: i64, hi: usize| -> Result<usize> {
            if v < 1 || v as usize > hi {
                return Err(Error::Parse {
                    line: line_no,
                    field: Some(RECORD_FIELDS[pos]),
                    message: format!("{} out of range 1..={}", v, hi),
                });
            }
            Ok(v as usize - 1)
        };
        let i = in_range(0, int(0)?, n)?;
        let o = in_range(1, int(1)?, num_ovs)?;
        let t = in_range(2, int(2)?, horizon)? + 1;
        let state = OvState::new(num(3)?, num(4)?, num(5)?, num(6)?, num(7)?);
        if !(state.length > 0.0 && state.width > 0.0) {
            return Err(Error::Parse {
                line: line_no,
                field: Some("length"),
                message: "footprint extents must be positive".into(),
            });
        }
        let slot = &mut cells[(i * horizon + (t - 1)) * num_ovs + o];
        if slot.is_some() {
            return Err(Error::Parse {
                line: line_no,
                field: None,
                message: format!(
                    "duplicate record for sample {}, vehicle {}, step {}",
                    i + 1,
                    o + 1,
                    t
                ),
            });
        }
        *slot = Some(state);
        if fields.len() >= 9 {
            let l = int(8)?;
            any_label = true;
            match labels[i * num_ovs + o] {
                None => labels[i * num_ovs + o] = Some(l),
                Some(prev) if prev != l => {
                    return Err(Error::Parse {
                        line: line_no,
                        field: Some("mode"),
                        message: format!(
                            "conflicting labels {prev} and {l} for sample {}, vehicle {}",
                            i + 1,
                            o + 1
                        ),
                    });
                }
                Some(_) => {}
            }
            if fields.len() == 10 {
                let p = num(9)?;
                any_prob = true;
                match probs[o].get(&l) {
                    None => {
                        probs[o].insert(l, p);
                    }
                    Some(&prev) if prev != p => {
                        return Err(Error::Parse {
                            line: line_no,
                            field: Some("mode_prob"),
                            message: format!(
                                "conflicting probabilities {prev} and {p} for label {l} of vehicle {}",
                                o + 1
                            ),
                        });
                    }
                    Some(_) => {}
                }
            }
        }
    }

    // Every cell must be present; report the first gap in (sample, ov, t)
    // order.
    for i in 0..n {
        for o in 0..num_ovs {
            for t in 1..=horizon {
                if cells[(i * horizon + (t - 1)) * num_ovs + o].is_none() {
                    return Err(Error::InvalidArgument(format!(
                        "missing forecast record for sample {}, vehicle {}, step {}",
                        i + 1,
                        o + 1,
                        t
                    )));
                }
            }
        }
    }
    let states: Vec<OvState> = cells.into_iter().map(|c| c.unwrap()).collect();
    let labels = if any_label {
        let mut out = Vec::with_capacity(n * num_ovs);
        for i in 0..n {
            for o in 0..num_ovs {
                match labels[i * num_ovs + o] {
                    Some(l) => out.push(l),
                    None => {
                        return Err(Error::MissingLabel {
                            sample: i + 1,
                            ov: o + 1,
                        })
                    }
                }
            }
        }
        Some(out)
    } else {
        None
    };
    let mode_probs = if any_prob { Some(probs) } else { None };
    PredictionSet::from_states(horizon, num_ovs, states, labels, mode_probs)
}

pub fn load_samples(path: &Path) -> Result<PredictionSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_samples(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixture_spec() -> GeneratorSpec {
        GeneratorSpec {
            seed: 7,
            kind: GeneratorKind::UniformMixture1d {
                intervals: vec![[-2.0, -1.0], [1.0, 2.0]],
                weights: vec![0.5, 0.5],
            },
        }
    }

    fn truck_spec(noise: f64) -> GeneratorSpec {
        GeneratorSpec {
            seed: 11,
            kind: GeneratorKind::AccelBrakeOv {
                start: OvState::new(12.0, 0.0, 0.0, 5.0, 2.2),
                speed: 10.0,
                dt: 0.5,
                horizon: 10,
                modes: vec![
                    OvMode {
                        accel: -2.0,
                        probability: 0.5,
                    },
                    OvMode {
                        accel: 3.0,
                        probability: 0.5,
                    },
                ],
                noise_sigma: noise,
                speed_cap: Some(15.0),
            },
        }
    }

    #[test]
    fn mixture_respects_support_and_labels() {
        let set = generate(&mixture_spec(), 1000).unwrap();
        assert_eq!((set.horizon, set.num_ovs, set.num_samples), (1, 1, 1000));
        let mut max_abs = 0.0f64;
        for i in 0..set.num_samples {
            let x = set.state(i, 1, 0).x;
            assert!(
                (-2.0..=-1.0).contains(&x) || (1.0..=2.0).contains(&x),
                "sample {i} at {x} escapes the mixture support"
            );
            let expected_label = if x < 0.0 { 0 } else { 1 };
            assert_eq!(set.label(i, 0), Some(expected_label));
            max_abs = max_abs.max(x.abs());
        }
        assert!(max_abs <= 2.0);
        // With 1000 draws the empirical maximum sits close to the edge.
        assert!(max_abs > 1.9);
    }

    #[test]
    fn mixture_mode_frequencies_within_three_sigma() {
        let set = generate(&mixture_spec(), 10_000).unwrap();
        let ones = (0..set.num_samples)
            .filter(|&i| set.label(i, 0) == Some(1))
            .count() as f64;
        let n = set.num_samples as f64;
        let sigma = (0.5 * 0.5 / n).sqrt();
        assert!(
            (ones / n - 0.5).abs() < 3.0 * sigma,
            "fraction {} outside the 3-sigma band",
            ones / n
        );
    }

    #[test]
    fn noise_free_truck_has_exactly_two_trajectories() {
        let set = generate(&truck_spec(0.0), 200).unwrap();
        let mut uniq: Vec<(i64, Vec<[f64; 2]>)> = Vec::new();
        for i in 0..set.num_samples {
            let traj: Vec<[f64; 2]> = (1..=set.horizon).map(|t| set.state(i, t, 0).center()).collect();
            let l = set.label(i, 0).unwrap();
            if !uniq.iter().any(|(ul, ut)| *ul == l && *ut == traj) {
                uniq.push((l, traj));
            }
        }
        assert_eq!(uniq.len(), 2, "expected one trajectory per mode");
        // Deceleration mode stops at 12 + 10^2 / (2*2) = 37 m; acceleration
        // mode caps at 15 m/s and ends past it.
        for (l, traj) in &uniq {
            let x_final = traj.last().unwrap()[0];
            if *l == 0 {
                assert!((x_final - 37.0).abs() < 1e-9, "stopping point {x_final}");
            } else {
                assert!(x_final > 60.0, "accelerating truck only reached {x_final}");
            }
            // No reversing ever.
            for w in traj.windows(2) {
                assert!(w[1][0] >= w[0][0] - 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_mode_probability_sends_all_samples_to_first_mode() {
        let mut spec = truck_spec(0.0);
        if let GeneratorKind::AccelBrakeOv { modes, .. } = &mut spec.kind {
            modes[0].probability = 1.0 - 1e-12;
            modes[1].probability = 1e-12;
        }
        let set = generate(&spec, 500).unwrap();
        assert!((0..set.num_samples).all(|i| set.label(i, 0) == Some(0)));
    }

    #[test]
    fn generation_is_deterministic_and_streams_are_disjoint() {
        let spec = truck_spec(0.3);
        let a = generate(&spec, 64).unwrap();
        let b = generate(&spec, 64).unwrap();
        assert_eq!(a, b);
        let (plan, fresh) = split_fresh(&spec, 64, 64).unwrap();
        assert_eq!(plan, a, "planning split must equal plain generation");
        assert_ne!(
            plan.state(0, plan.horizon, 0),
            fresh.state(0, fresh.horizon, 0),
            "validation stream must not replay the planning stream"
        );
        let (plan2, fresh2) = split_fresh(&spec, 64, 64).unwrap();
        assert_eq!(plan, plan2);
        assert_eq!(fresh, fresh2);
    }

    #[test]
    fn batch_generation_equals_per_sample_draws() {
        // The batch API (parallel when the feature is on) must reproduce the
        // one-at-a-time sequential draws bit for bit.
        let spec = truck_spec(0.3);
        let set = generate(&spec, 128).unwrap();
        for i in 0..set.num_samples {
            let lone = generate_one(&spec, purpose::PLAN, i as u64);
            for t in 1..=set.horizon {
                assert_eq!(*set.state(i, t, 0), lone.states[t - 1]);
            }
            assert_eq!(set.label(i, 0), Some(lone.labels[0]));
        }
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let set = generate(&truck_spec(0.3), 16).unwrap();
        let text = render_samples(&set).unwrap();
        let back = parse_samples(&text).unwrap();
        assert_eq!(set, back);
        // And through an actual file.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.txt");
        save_samples(&set, &path).unwrap();
        let loaded = load_samples(&path).unwrap();
        assert_eq!(set, loaded);
    }

    #[test]
    fn hand_written_fixture_parses_and_clusters_by_labels() {
        let text = "\
{\"n\": 3, \"horizon\": 1, \"ovs\": 1}
1,1,1,0.0,0.0,0.0,1.0,1.0,1,0.6
2,1,1,0.5,0.0,0.0,1.0,1.0,1,0.6
3,1,1,9.0,0.0,0.0,1.0,1.0,2,0.4
";
        let set = parse_samples(text).unwrap();
        assert_eq!(set.labels_for(0).unwrap(), vec![1, 1, 2]);
        let index = crate::clustering::cluster_by_labels(
            &set.labels_for(0).unwrap(),
            &set.final_positions(0),
            set.mode_probs.as_ref().map(|p| &p[0]),
        )
        .unwrap();
        assert_eq!(index.k(), 2);
        assert_eq!(index.clusters[0].members, vec![0, 1]);
        assert_eq!(index.clusters[1].members, vec![2]);
        assert_eq!(index.clusters[0].probability, Some(0.6));
    }

    #[test]
    fn missing_cell_is_reported_with_coordinates() {
        let text = "\
{\"n\": 2, \"horizon\": 2, \"ovs\": 1}
1,1,1,0.0,0.0,0.0,1.0,1.0
1,1,2,0.0,0.0,0.0,1.0,1.0
2,1,1,0.0,0.0,0.0,1.0,1.0
";
        match parse_samples(text) {
            Err(Error::InvalidArgument(msg)) => {
                assert!(msg.contains("sample 2") && msg.contains("step 2"), "{msg}");
            }
            other => panic!("expected schema violation, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_and_field() {
        let text = "\
{\"n\": 1, \"horizon\": 1, \"ovs\": 1}
1,1,1,not-a-number,0.0,0.0,1.0,1.0
";
        match parse_samples(text) {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(field, Some("x"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        // Duplicate cell.
        let text = "\
{\"n\": 1, \"horizon\": 1, \"ovs\": 1}
1,1,1,0.0,0.0,0.0,1.0,1.0
1,1,1,0.0,0.0,0.0,1.0,1.0
";
        match parse_samples(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected duplicate error, got {other:?}"),
        }
        // Conflicting labels across steps.
        let text = "\
{\"n\": 1, \"horizon\": 2, \"ovs\": 1}
1,1,1,0.0,0.0,0.0,1.0,1.0,1
1,1,2,0.0,0.0,0.0,1.0,1.0,2
";
        match parse_samples(text) {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(field, Some("mode"));
            }
            other => panic!("expected label conflict, got {other:?}"),
        }
    }

    #[test]
    fn label_gaps_are_reported() {
        // One (sample, vehicle) pair carries a label, the other does not.
        let text = "\
{\"n\": 2, \"horizon\": 1, \"ovs\": 1}
1,1,1,0.0,0.0,0.0,1.0,1.0,1
2,1,1,0.0,0.0,0.0,1.0,1.0
";
        match parse_samples(text) {
            Err(Error::MissingLabel { sample, ov }) => {
                assert_eq!((sample, ov), (2, 1));
            }
            other => panic!("expected missing-label error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad_weights = GeneratorSpec {
            seed: 0,
            kind: GeneratorKind::UniformMixture1d {
                intervals: vec![[-2.0, -1.0], [1.0, 2.0]],
                weights: vec![0.7, 0.7],
            },
        };
        assert!(generate(&bad_weights, 10).is_err());
        let degenerate = GeneratorSpec {
            seed: 0,
            kind: GeneratorKind::UniformMixture1d {
                intervals: vec![[1.0, 1.0]],
                weights: vec![1.0],
            },
        };
        assert!(generate(&degenerate, 10).is_err());
        assert!(generate(&mixture_spec(), 0).is_err());
    }

    #[test]
    fn speed_clamps_cover_partial_steps() {
        // Stop mid-step: v=1, a=-4, dt=0.5 -> stops after 0.25 s, ds = 0.125.
        let (ds, v) = advance_speed_clamped(1.0, -4.0, 0.5, None);
        assert!((ds - 0.125).abs() < 1e-12);
        assert_eq!(v, 0.0);
        // Cap mid-step: v=14, a=4, dt=0.5, cap=15 -> reaches cap after
        // 0.25 s (ds = 3.625), cruises the rest (ds += 3.75).
        let (ds, v) = advance_speed_clamped(14.0, 4.0, 0.5, Some(15.0));
        assert!((ds - (3.625 + 3.75)).abs() < 1e-12);
        assert_eq!(v, 15.0);
        // Plain kinematics otherwise.
        let (ds, v) = advance_speed_clamped(10.0, 1.0, 0.5, Some(15.0));
        assert!((ds - 5.125).abs() < 1e-12);
        assert!((v - 10.5).abs() < 1e-12);
    }
}
