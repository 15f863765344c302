//! Outlier detection over embedding rows (and request durations): DBSCAN,
//! OPTICS with DBSCAN-equivalent cluster extraction, k-NN distance, and
//! Z-score, plus ground-truth labeling and confusion-matrix evaluation.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::depgraph::DepGraph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dbscan,
    Optics,
    Knn,
    Zscore,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Dbscan => "dbscan",
            Method::Optics => "optics",
            Method::Knn => "knn",
            Method::Zscore => "zscore",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dbscan" => Ok(Method::Dbscan),
            "optics" => Ok(Method::Optics),
            "knn" => Ok(Method::Knn),
            "zscore" => Ok(Method::Zscore),
            other => Err(Error::config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZscoreFeature {
    Duration,
    CentroidDistance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub eps: f64,
    pub min_pts: usize,
    pub k: usize,
    pub knn_threshold: f64,
    pub z_threshold: f64,
    pub zscore_feature: ZscoreFeature,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        // Calibrated against the default synthetic dataset embedded with the
        // default embedding config: normal 4-NN distances stay under ~0.10,
        // injected outliers sit above ~0.25.
        DetectionConfig {
            eps: 0.09,
            min_pts: 4,
            k: 4,
            knn_threshold: 0.09,
            z_threshold: 3.0,
            zscore_feature: ZscoreFeature::Duration,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps <= 0.0 || self.knn_threshold <= 0.0 || self.z_threshold <= 0.0 {
            return Err(Error::config("eps and thresholds must be positive"));
        }
        if self.min_pts == 0 || self.k == 0 {
            return Err(Error::config("min_pts and k must be positive"));
        }
        Ok(())
    }
}

/// Per-point verdicts of one detection method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionResult {
    pub method: Method,
    pub outlier_flags: Vec<bool>,
    /// Cluster assignment, `None` = noise. Density methods only.
    pub cluster_ids: Option<Vec<Option<usize>>>,
    /// OPTICS visit order.
    pub ordering: Option<Vec<usize>>,
    /// OPTICS reachability per point (in point order), +inf = undefined.
    pub reachability: Option<Vec<f64>>,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn region_query(points: &[Vec<f64>], p: usize, eps: f64) -> Vec<usize> {
    // Neighborhood includes the query point itself.
    (0..points.len())
        .filter(|&q| euclidean(&points[p], &points[q]) <= eps)
        .collect()
}

/// Classic DBSCAN; a point is core iff its eps-neighborhood (self included)
/// holds at least `min_pts` points. Deterministic under point-index order.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> DetectionResult {
    let n = points.len();
    let mut cluster: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next_id = 0usize;
    for p in 0..n {
        if visited[p] {
            continue;
        }
        visited[p] = true;
        let neighbors = region_query(points, p, eps);
        if neighbors.len() < min_pts {
            continue; // stays noise unless later claimed as a border point
        }
        let id = next_id;
        next_id += 1;
        cluster[p] = Some(id);
        let mut queue: std::collections::VecDeque<usize> = neighbors.into();
        while let Some(q) = queue.pop_front() {
            if cluster[q].is_none() {
                cluster[q] = Some(id);
            }
            if visited[q] {
                continue;
            }
            visited[q] = true;
            let qn = region_query(points, q, eps);
            if qn.len() >= min_pts {
                queue.extend(qn);
            }
        }
    }
    DetectionResult {
        method: Method::Dbscan,
        outlier_flags: cluster.iter().map(Option::is_none).collect(),
        cluster_ids: Some(cluster),
        ordering: None,
        reachability: None,
    }
}

#[derive(PartialEq)]
struct Seed {
    reach: f64,
    index: usize,
}

impl Eq for Seed {}

impl Ord for Seed {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Ties break by point index, keeping the queue deterministic.
        self.reach
            .total_cmp(&other.reach)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Seed {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// OPTICS ordering plus reachability distances, followed by
/// DBSCAN-equivalent cluster extraction at `eps`.
pub fn optics(points: &[Vec<f64>], eps: f64, min_pts: usize) -> DetectionResult {
    let n = points.len();
    let mut processed = vec![false; n];
    let mut reachability = vec![f64::INFINITY; n];
    let mut ordering = Vec::with_capacity(n);

    let core_distance = |p: usize| -> f64 {
        if min_pts > n {
            return f64::INFINITY;
        }
        let mut dists: Vec<f64> = (0..n).map(|q| euclidean(&points[p], &points[q])).collect();
        dists.sort_unstable_by(f64::total_cmp);
        let d = dists[min_pts - 1]; // self is at distance 0
        if d <= eps {
            d
        } else {
            f64::INFINITY
        }
    };

    for start in 0..n {
        if processed[start] {
            continue;
        }
        let mut heap: BinaryHeap<Reverse<Seed>> = BinaryHeap::new();
        heap.push(Reverse(Seed { reach: f64::INFINITY, index: start }));
        while let Some(Reverse(seed)) = heap.pop() {
            let p = seed.index;
            if processed[p] {
                continue; // stale heap entry
            }
            processed[p] = true;
            ordering.push(p);
            let cd = core_distance(p);
            if cd.is_finite() {
                for q in region_query(points, p, eps) {
                    if processed[q] {
                        continue;
                    }
                    let new_reach = cd.max(euclidean(&points[p], &points[q]));
                    if new_reach < reachability[q] {
                        reachability[q] = new_reach;
                        heap.push(Reverse(Seed { reach: new_reach, index: q }));
                    }
                }
            }
        }
    }

    // DBSCAN-equivalent extraction: walk the ordering, opening a new
    // cluster whenever reachability jumps above eps at a core point.
    let mut cluster: Vec<Option<usize>> = vec![None; n];
    let mut next_id = 0usize;
    let mut current: Option<usize> = None;
    for &p in &ordering {
        if reachability[p] > eps {
            if core_distance(p).is_finite() {
                current = Some(next_id);
                next_id += 1;
                cluster[p] = current;
            } else {
                cluster[p] = None;
            }
        } else {
            cluster[p] = current;
        }
    }
    // Border points whose component was entered at a non-core start keep an
    // undefined reachability; claim them for the first core point in range
    // so the noise set matches DBSCAN's exactly.
    for p in 0..n {
        if cluster[p].is_none() {
            for q in 0..n {
                if q != p
                    && euclidean(&points[p], &points[q]) <= eps
                    && core_distance(q).is_finite()
                    && cluster[q].is_some()
                {
                    cluster[p] = cluster[q];
                    break;
                }
            }
        }
    }
    DetectionResult {
        method: Method::Optics,
        outlier_flags: cluster.iter().map(Option::is_none).collect(),
        cluster_ids: Some(cluster),
        ordering: Some(ordering),
        reachability: Some(reachability),
    }
}

/// Flags points whose distance to their k-th nearest neighbor (self
/// excluded) exceeds the threshold.
pub fn knn_outliers(points: &[Vec<f64>], k: usize, threshold: f64) -> Result<DetectionResult> {
    if points.len() <= k {
        return Err(Error::config(format!(
            "k-NN needs more than k={k} points, got {}",
            points.len()
        )));
    }
    let flags = (0..points.len())
        .map(|p| {
            let mut dists: Vec<f64> = (0..points.len())
                .filter(|&q| q != p)
                .map(|q| euclidean(&points[p], &points[q]))
                .collect();
            dists.sort_unstable_by(f64::total_cmp);
            dists[k - 1] > threshold
        })
        .collect();
    Ok(DetectionResult {
        method: Method::Knn,
        outlier_flags: flags,
        cluster_ids: None,
        ordering: None,
        reachability: None,
    })
}

fn mean_and_population_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Z-score detection over a scalar feature per graph: the request duration,
/// or the distance from the embedding centroid.
pub fn zscore_outliers(
    graphs: &[DepGraph],
    embeddings: Option<&[Vec<f64>]>,
    feature: ZscoreFeature,
    z_threshold: f64,
) -> Result<DetectionResult> {
    let values: Vec<f64> = match feature {
        ZscoreFeature::Duration => graphs.iter().map(|g| g.total_duration_ms).collect(),
        ZscoreFeature::CentroidDistance => {
            let rows = embeddings
                .ok_or_else(|| Error::config("centroid_distance needs embeddings"))?;
            let d = rows.first().map(Vec::len).unwrap_or(0);
            let n = rows.len() as f64;
            let mut centroid = vec![0.0; d];
            for row in rows {
                for (c, v) in centroid.iter_mut().zip(row) {
                    *c += v / n;
                }
            }
            rows.iter().map(|r| euclidean(r, &centroid)).collect()
        }
    };
    zscore_flags(&values, z_threshold).map(|flags| DetectionResult {
        method: Method::Zscore,
        outlier_flags: flags,
        cluster_ids: None,
        ordering: None,
        reachability: None,
    })
}

/// |z| thresholding over raw scalar values; zero spread flags nothing.
pub fn zscore_flags(values: &[f64], z_threshold: f64) -> Result<Vec<bool>> {
    if values.len() < 2 {
        return Err(Error::config("z-score needs a sample of at least 2"));
    }
    if values.len() <= 30 {
        log::warn!("z-score on a sample of {} (<= 30); take results with caution", values.len());
    }
    let (mean, sd) = mean_and_population_sd(values);
    if sd == 0.0 {
        return Ok(vec![false; values.len()]);
    }
    Ok(values.iter().map(|v| ((v - mean) / sd).abs() > z_threshold).collect())
}

/// Ground truth: a request is an outlier iff its runtime strictly exceeds
/// the threshold (200 ms by default).
pub fn ground_truth_labels(graphs: &[DepGraph], threshold_ms: f64) -> Vec<bool> {
    graphs.iter().map(|g| g.total_duration_ms > threshold_ms).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Option<Method>,
    pub n_outliers_predicted: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Confusion-matrix metrics; precision/recall collapse to 0 on an empty
/// denominator.
pub fn evaluate(predicted: &[bool], truth: &[bool]) -> Result<EvalReport> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::config("predicted and truth must have equal nonzero length"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let n = predicted.len() as f64;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(EvalReport {
        method: None,
        n_outliers_predicted: tp + fp,
        tp,
        fp,
        tn,
        fn_,
        accuracy: (tp + tn) as f64 / n,
        precision,
        recall,
        f1,
    })
}
