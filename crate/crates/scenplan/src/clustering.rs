//! Grouping forecast samples into modes.
//!
//! Forecast samples for one obstacle vehicle are grouped either by k-means on
//! a 2-D feature (the vehicle's final-time position) or by mode labels that
//! shipped with the forecast. The result is a [`ClusterIndex`]: a partition
//! of sample indices with one representative centroid per cluster. Rare
//! labeled modes can be folded into their nearest retained mode with
//! [`merge_rare_modes`] before the risk budget is split.
//!
//! Everything here is deterministic: k-means uses keyed substreams for
//! seeding and restarts, all ties break toward the lowest index, and label
//! clusters are ordered by ascending label.

use crate::error::{Error, Result};
use crate::rng::{purpose, CounterRng};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Maximum Lloyd iterations per restart.
const MAX_LLOYD_ITERS: usize = 100;
/// Centroid-shift threshold that counts as converged.
const SHIFT_TOL: f64 = 1e-8;
/// Number of seeded restarts; the lowest within-cluster sum of squares wins.
const RESTARTS: u64 = 10;

#[inline]
fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// One cluster of sample indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// 1-based cluster id. For label clustering, ids follow ascending label
    /// order; for k-means, ascending centroid order (x, then y).
    pub id: usize,
    /// Ascending 0-based sample indices.
    pub members: Vec<usize>,
    /// Mean feature of the members.
    pub centroid: [f64; 2],
    /// Mode probability, when the forecast supplied one.
    pub probability: Option<f64>,
}

/// A partition of `0..n` sample indices into clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterIndex {
    pub clusters: Vec<Cluster>,
}

impl ClusterIndex {
    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    /// Total number of samples across clusters.
    pub fn len(&self) -> usize {
        self.clusters.iter().map(|c| c.members.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cluster id (1-based) of the nearest centroid; ties break toward the
    /// lowest id. Used to assign fresh samples to planning-time clusters.
    pub fn assign(&self, feature: [f64; 2]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for c in &self.clusters {
            let d = dist2(feature, c.centroid);
            if d < best.0 {
                best = (d, c.id);
            }
        }
        best.1
    }

    /// Per-sample cluster ids (1-based), for `0..len()`.
    pub fn labels(&self) -> Vec<usize> {
        let mut out = vec![0usize; self.len()];
        for c in &self.clusters {
            for &m in &c.members {
                out[m] = c.id;
            }
        }
        out
    }

    /// Within-cluster sum of squared distances to centroids.
    pub fn wcss(&self, features: &[[f64; 2]]) -> f64 {
        self.clusters
            .iter()
            .map(|c| {
                c.members
                    .iter()
                    .map(|&m| dist2(features[m], c.centroid))
                    .sum::<f64>()
            })
            .sum()
    }
}

/// k-means++ seeding: first center uniform, then D^2-weighted picks.
fn seed_centroids(features: &[[f64; 2]], k: usize, rng: &mut CounterRng) -> Vec<[f64; 2]> {
    let n = features.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(features[rng.pick(n)]);
    let mut d2: Vec<f64> = features
        .iter()
        .map(|&f| dist2(f, centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            features[chosen]
        } else {
            // All remaining mass at the chosen points; a distinct point is
            // guaranteed by the caller's distinct-count check, find the first.
            *features
                .iter()
                .find(|f| centroids.iter().all(|c| dist2(**f, *c) > 0.0))
                .expect("distinct point must exist")
        };
        centroids.push(next);
        for (i, &f) in features.iter().enumerate() {
            d2[i] = d2[i].min(dist2(f, next));
        }
    }
    centroids
}

/// Assigns each feature to the nearest centroid (ties to the lowest index).
fn assign_all(features: &[[f64; 2]], centroids: &[[f64; 2]]) -> Vec<usize> {
    features
        .iter()
        .map(|&f| {
            let mut best = (f64::INFINITY, 0usize);
            for (j, &c) in centroids.iter().enumerate() {
                let d = dist2(f, c);
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect()
}

fn lloyd(features: &[[f64; 2]], k: usize, rng: &mut CounterRng) -> (Vec<usize>, Vec<[f64; 2]>) {
    let mut centroids = seed_centroids(features, k, rng);
    let mut assignment = assign_all(features, &centroids);
    for _ in 0..MAX_LLOYD_ITERS {
        // Update step.
        let mut sums = vec![[0.0f64; 2]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignment.iter().enumerate() {
            sums[a][0] += features[i][0];
            sums[a][1] += features[i][1];
            counts[a] += 1;
        }
        let mut new_centroids = centroids.clone();
        for j in 0..k {
            if counts[j] > 0 {
                new_centroids[j] = [sums[j][0] / counts[j] as f64, sums[j][1] / counts[j] as f64];
            }
        }
        // Empty clusters reseed at the point farthest from its assigned
        // centroid, one at a time, skipping points already claimed.
        let mut claimed: Vec<usize> = Vec::new();
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..features.len())
                    .filter(|i| !claimed.contains(i))
                    .max_by(|&a, &b| {
                        let da = dist2(features[a], new_centroids[assignment[a]]);
                        let db = dist2(features[b], new_centroids[assignment[b]]);
                        da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                    })
                    .expect("nonempty feature set");
                new_centroids[j] = features[far];
                claimed.push(far);
            }
        }
        let shift = centroids
            .iter()
            .zip(&new_centroids)
            .map(|(a, b)| dist2(*a, *b).sqrt())
            .fold(0.0f64, f64::max);
        centroids = new_centroids;
        assignment = assign_all(features, &centroids);
        if shift < SHIFT_TOL {
            break;
        }
    }
    (assignment, centroids)
}

/// Clusters 2-D features (final-time obstacle positions) into `k` groups by
/// seeded k-means: k-means++ starts, Lloyd iterations to convergence, best of
/// 10 restarts by within-cluster sum of squares. Requires at least `k`
/// distinct features. Cluster ids are assigned in ascending centroid order.
pub fn cluster_kmeans(features: &[[f64; 2]], k: usize, seed: u64) -> Result<ClusterIndex> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if features.is_empty() {
        return Err(Error::DegenerateClustering("no features to cluster".into()));
    }
    let mut distinct: Vec<[f64; 2]> = Vec::new();
    for &f in features {
        if !distinct.iter().any(|d| dist2(*d, f) == 0.0) {
            distinct.push(f);
            if distinct.len() >= k {
                break;
            }
        }
    }
    if distinct.len() < k {
        return Err(Error::DegenerateClustering(format!(
            "k = {k} clusters requested but only {} distinct points exist",
            distinct.len()
        )));
    }

    let mut best: Option<(f64, Vec<usize>, Vec<[f64; 2]>)> = None;
    for restart in 0..RESTARTS {
        let mut rng = CounterRng::from_key(&[seed, purpose::KMEANS, restart]);
        let (assignment, centroids) = lloyd(features, k, &mut rng);
        let wcss: f64 = assignment
            .iter()
            .enumerate()
            .map(|(i, &a)| dist2(features[i], centroids[a]))
            .sum();
        let better = match &best {
            None => true,
            Some((w, _, _)) => wcss < *w,
        };
        if better {
            best = Some((wcss, assignment, centroids));
        }
    }
    let (_, assignment, centroids) = best.expect("at least one restart ran");

    // Canonical order: ascending centroid (x, then y), so the same data gives
    // the same cluster ids regardless of seeding order.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        centroids[a]
            .partial_cmp(&centroids[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut clusters = Vec::with_capacity(k);
    for (new_id, &old) in order.iter().enumerate() {
        let members: Vec<usize> = assignment
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == old)
            .map(|(i, _)| i)
            .collect();
        clusters.push(Cluster {
            id: new_id + 1,
            members,
            centroid: centroids[old],
            probability: None,
        });
    }
    Ok(ClusterIndex { clusters })
}

/// Groups samples by their forecast mode labels. Cluster ids are 1..K in
/// ascending label order; centroids are member feature means; probabilities
/// are attached when supplied.
pub fn cluster_by_labels(
    labels: &[i64],
    features: &[[f64; 2]],
    probabilities: Option<&BTreeMap<i64, f64>>,
) -> Result<ClusterIndex> {
    if labels.is_empty() {
        return Err(Error::DegenerateClustering("no labels to cluster".into()));
    }
    if labels.len() != features.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels vs {} features",
            labels.len(),
            features.len()
        )));
    }
    let mut by_label: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let clusters = by_label
        .into_iter()
        .enumerate()
        .map(|(idx, (label, members))| {
            let n = members.len() as f64;
            let mut cx = 0.0;
            let mut cy = 0.0;
            for &m in &members {
                cx += features[m][0];
                cy += features[m][1];
            }
            Cluster {
                id: idx + 1,
                members,
                centroid: [cx / n, cy / n],
                probability: probabilities.and_then(|p| p.get(&label).copied()),
            }
        })
        .collect();
    Ok(ClusterIndex { clusters })
}

/// Folds modes whose probability is below `threshold` into the retained mode
/// whose member-mean feature is nearest (samples move; the dropped
/// probability mass is discarded and retained probabilities are renormalized
/// to sum to 1). Returns the rewritten labels and the renormalized
/// probability table. Errors if no mode reaches the threshold.
pub fn merge_rare_modes(
    labels: &[i64],
    probabilities: &BTreeMap<i64, f64>,
    features: &[[f64; 2]],
    threshold: f64,
) -> Result<(Vec<i64>, BTreeMap<i64, f64>)> {
    if labels.len() != features.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels vs {} features",
            labels.len(),
            features.len()
        )));
    }
    for &l in labels {
        if !probabilities.contains_key(&l) {
            return Err(Error::InvalidArgument(format!(
                "label {l} appears in samples but has no probability entry"
            )));
        }
    }
    let retained: Vec<i64> = probabilities
        .iter()
        .filter(|(_, &p)| p >= threshold)
        .map(|(&l, _)| l)
        .collect();
    if retained.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no mode reaches the probability threshold {threshold}"
        )));
    }
    // Member-mean feature per label (labels with no samples keep their
    // probability entry but cannot attract rare modes).
    let mut means: BTreeMap<i64, ([f64; 2], usize)> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        let e = means.entry(l).or_insert(([0.0, 0.0], 0));
        e.0[0] += features[i][0];
        e.0[1] += features[i][1];
        e.1 += 1;
    }
    let mean_of = |l: i64| -> Option<[f64; 2]> {
        means
            .get(&l)
            .map(|(s, n)| [s[0] / *n as f64, s[1] / *n as f64])
    };

    let mut remap: BTreeMap<i64, i64> = BTreeMap::new();
    for (&l, _) in probabilities.iter() {
        if retained.contains(&l) {
            remap.insert(l, l);
            continue;
        }
        let Some(src) = mean_of(l) else {
            continue; // rare mode with no samples: nothing to move
        };
        let target = retained
            .iter()
            .filter_map(|&r| mean_of(r).map(|m| (r, dist2(src, m))))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
            .map(|(r, _)| r)
            .unwrap_or(retained[0]);
        remap.insert(l, target);
    }

    let new_labels: Vec<i64> = labels.iter().map(|l| remap[l]).collect();
    let retained_mass: f64 = retained.iter().map(|l| probabilities[l]).sum();
    let new_probs: BTreeMap<i64, f64> = retained
        .iter()
        .map(|&l| (l, probabilities[&l] / retained_mass))
        .collect();
    Ok((new_labels, new_probs))
}
