//! End-to-end orchestration: load -> prune -> embed -> detect per method ->
//! evaluate -> root-cause diff of each outlier against the normal cluster,
//! with per-stage wall-clock timing.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::depgraph::{load_depgraph_set, DepGraph};
use crate::detection::{
    dbscan, evaluate, knn_outliers, optics, zscore_outliers, DetectionConfig, DetectionResult,
    EvalReport, Method,
};
use crate::dot::{render_diff, render_merged};
use crate::embedding::{train_embeddings, EmbeddingConfig, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::rootcause::{compare, lift, merge_cluster, DiffGraph, MergedDepGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterPairing {
    /// Compare each outlier against the largest cluster.
    Largest,
    /// Compare each outlier against the cluster with the nearest centroid.
    NearestCentroid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub labels: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub prune_threshold_pct: f64,
    pub embedding: EmbeddingConfig,
    pub detection: DetectionConfig,
    pub methods: Vec<Method>,
    pub ground_truth_threshold_ms: f64,
    pub pairing: ClusterPairing,
    pub strict: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: PathBuf::new(),
            labels: None,
            out_dir: PathBuf::from("out"),
            prune_threshold_pct: 3.0,
            embedding: EmbeddingConfig::default(),
            detection: DetectionConfig::default(),
            methods: vec![Method::Dbscan, Method::Optics, Method::Knn, Method::Zscore],
            ground_truth_threshold_ms: 200.0,
            pairing: ClusterPairing::Largest,
            strict: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("at least one detection method must be selected"));
        }
        if !(0.0..=100.0).contains(&self.prune_threshold_pct) {
            return Err(Error::config("prune threshold must lie in [0, 100]"));
        }
        self.embedding.validate()?;
        self.detection.validate()
    }
}

/// Wall-clock seconds per pipeline stage, shaped after the timing table the
/// `bench` subcommand prints.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TimingReport {
    pub load_s: f64,
    pub embed_s: f64,
    pub cluster_s: BTreeMap<String, f64>,
    pub detect_s: BTreeMap<String, f64>,
    pub merge_load_s: f64,
    pub merge_merge_s: f64,
    pub merge_construct_s: f64,
    pub compare_load_s: f64,
    pub compare_merge_s: f64,
    pub compare_compare_s: f64,
    pub compare_construct_s: f64,
}

impl TimingReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str("stage                                time (s)\n");
        let mut row = |name: &str, v: f64| {
            out.push_str(&format!("{name:<36} {v:>8.3}\n"));
        };
        row("load depgraphs", self.load_s);
        row("depgraph embeddings", self.embed_s);
        for (m, v) in &self.cluster_s {
            row(&format!("cluster: {m}"), *v);
        }
        for (m, v) in &self.detect_s {
            row(&format!("outlier detection: {m}"), *v);
        }
        row("merge: load cluster", self.merge_load_s);
        row("merge: merge depgraphs", self.merge_merge_s);
        row("merge: construct graph", self.merge_construct_s);
        row("compare: load", self.compare_load_s);
        row("compare: merge", self.compare_merge_s);
        row("compare: compare", self.compare_compare_s);
        row("compare: construct graph", self.compare_construct_s);
        out
    }
}

pub struct PipelineOutput {
    pub graphs: Vec<DepGraph>,
    pub embeddings: EmbeddingMatrix,
    pub results: Vec<DetectionResult>,
    pub reports: Vec<EvalReport>,
    pub diffs: Vec<(String, DiffGraph)>,
    pub timing: TimingReport,
}

pub fn run_detection(
    method: Method,
    graphs: &[DepGraph],
    rows: &[Vec<f64>],
    cfg: &DetectionConfig,
) -> Result<DetectionResult> {
    match method {
        Method::Dbscan => Ok(dbscan(rows, cfg.eps, cfg.min_pts)),
        Method::Optics => Ok(optics(rows, cfg.eps, cfg.min_pts)),
        Method::Knn => knn_outliers(rows, cfg.k, cfg.knn_threshold),
        Method::Zscore => {
            zscore_outliers(graphs, Some(rows), cfg.zscore_feature, cfg.z_threshold)
        }
    }
}

/// Members of the normal cluster an outlier should be diffed against.
pub fn reference_cluster(
    result: &DetectionResult,
    rows: &[Vec<f64>],
    outlier: usize,
    pairing: ClusterPairing,
) -> Vec<usize> {
    match &result.cluster_ids {
        Some(ids) => {
            let n_clusters = ids.iter().flatten().copied().max().map_or(0, |m| m + 1);
            if n_clusters == 0 {
                return Vec::new();
            }
            let members = |c: usize| -> Vec<usize> {
                ids.iter()
                    .enumerate()
                    .filter(|(_, id)| **id == Some(c))
                    .map(|(i, _)| i)
                    .collect()
            };
            let chosen = match pairing {
                ClusterPairing::Largest => (0..n_clusters)
                    .max_by_key(|&c| members(c).len())
                    .unwrap_or(0),
                ClusterPairing::NearestCentroid => {
                    let d = rows[0].len();
                    let mut best = (0usize, f64::INFINITY);
                    for c in 0..n_clusters {
                        let m = members(c);
                        if m.is_empty() {
                            continue;
                        }
                        let mut centroid = vec![0.0; d];
                        for &i in &m {
                            for (s, v) in centroid.iter_mut().zip(&rows[i]) {
                                *s += v / m.len() as f64;
                            }
                        }
                        let dist = crate::detection::euclidean(&rows[outlier], &centroid);
                        if dist < best.1 {
                            best = (c, dist);
                        }
                    }
                    best.0
                }
            };
            members(chosen)
        }
        // Methods without clusters: the normal population is everything
        // the method did not flag.
        None => result
            .outlier_flags
            .iter()
            .enumerate()
            .filter(|(_, &f)| !f)
            .map(|(i, _)| i)
            .collect(),
    }
}

fn write_detection_csv(path: &Path, ids: &[String], r: &DetectionResult) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "request_id,method,cluster_id,is_outlier")?;
    for (i, id) in ids.iter().enumerate() {
        let cluster = r
            .cluster_ids
            .as_ref()
            .map(|c| c[i].map_or("NOISE".to_string(), |v| v.to_string()))
            .unwrap_or_default();
        writeln!(f, "{id},{},{cluster},{}", r.method.name(), r.outlier_flags[i])?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<(String, bool)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line.starts_with("request_id") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (id, flag) = line
            .rsplit_once(',')
            .ok_or_else(|| Error::Parse(format!("labels line {}: missing comma", i + 1)))?;
        let flag = flag
            .trim()
            .parse::<bool>()
            .map_err(|e| Error::Parse(format!("labels line {}: {e}", i + 1)))?;
        out.push((id.to_string(), flag));
    }
    Ok(out)
}

/// Runs the full pipeline, writing detection CSVs, evaluation JSONs, merged
/// and diff graphs with DOT renderings, and a timing report. All stochastic
/// stages derive from the embedding seed, so a fixed config reproduces the
/// artifact tree byte for byte (timing.json aside).
pub fn run_pipeline(config: &PipelineConfig, emit_timing: bool) -> Result<PipelineOutput> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir)?;
    let mut timing = TimingReport::default();

    let t = Instant::now();
    let file = fs::File::open(&config.input)?;
    let graphs = load_depgraph_set(std::io::BufReader::new(file), config.strict)?;
    timing.load_s = t.elapsed().as_secs_f64();
    if graphs.is_empty() {
        return Err(Error::validation("input contains no graphs"));
    }
    let ids: Vec<String> = graphs.iter().map(|g| g.request_id.clone()).collect();

    let truth: Option<Vec<bool>> = match &config.labels {
        Some(path) => {
            let by_id: BTreeMap<String, bool> = read_labels_csv(path)?.into_iter().collect();
            Some(
                ids.iter()
                    .map(|id| {
                        by_id.get(id).copied().ok_or_else(|| {
                            Error::validation(format!("no label for request {id:?}"))
                        })
                    })
                    .collect::<Result<_>>()?,
            )
        }
        None => None,
    };

    let t = Instant::now();
    let mut emb_cfg = config.embedding.clone();
    emb_cfg.prune_threshold_pct = Some(config.prune_threshold_pct);
    let embeddings = train_embeddings(&graphs, &emb_cfg)?;
    timing.embed_s = t.elapsed().as_secs_f64();
    {
        let mut f = fs::File::create(config.out_dir.join("embeddings.csv"))?;
        embeddings.write_csv(&mut f)?;
        write_json(
            &config.out_dir.join("embeddings.meta.json"),
            &serde_json::json!({
                "config": emb_cfg,
                "vocab_size": embeddings.vocab_size,
            }),
        )?;
    }

    let mut results = Vec::new();
    let mut reports = Vec::new();
    for &method in &config.methods {
        let t = Instant::now();
        let result = run_detection(method, &graphs, &embeddings.rows, &config.detection)?;
        let elapsed = t.elapsed().as_secs_f64();
        match method {
            Method::Dbscan | Method::Optics => {
                timing.cluster_s.insert(method.name().into(), elapsed);
                timing.detect_s.insert(method.name().into(), elapsed);
            }
            _ => {
                timing.detect_s.insert(method.name().into(), elapsed);
            }
        }
        write_detection_csv(
            &config.out_dir.join(format!("detection_{}.csv", method.name())),
            &ids,
            &result,
        )?;
        if let Some(truth) = &truth {
            let mut report = evaluate(&result.outlier_flags, truth)?;
            report.method = Some(method);
            write_json(
                &config.out_dir.join(format!("eval_{}.json", method.name())),
                &report,
            )?;
            reports.push(report);
        }
        results.push(result);
    }

    // Root causes: diff every outlier of the pairing method against its
    // normal cluster. Density methods are preferred for the pairing since
    // they produce the clusters.
    let pairing_result = results
        .iter()
        .find(|r| matches!(r.method, Method::Dbscan | Method::Optics))
        .or(results.first())
        .unwrap();
    let mut diffs = Vec::new();
    let mut merged_cache: BTreeMap<Vec<usize>, MergedDepGraph> = BTreeMap::new();
    for (i, &flag) in pairing_result.outlier_flags.iter().enumerate() {
        if !flag {
            continue;
        }
        let t = Instant::now();
        let members =
            reference_cluster(pairing_result, &embeddings.rows, i, config.pairing);
        if members.is_empty() {
            continue;
        }
        timing.merge_load_s += t.elapsed().as_secs_f64();
        let t = Instant::now();
        let merged = match merged_cache.get(&members) {
            Some(m) => m.clone(),
            None => {
                let cluster: Vec<DepGraph> =
                    members.iter().map(|&j| graphs[j].clone()).collect();
                let m = merge_cluster(&cluster)?;
                merged_cache.insert(members.clone(), m.clone());
                m
            }
        };
        timing.merge_merge_s += t.elapsed().as_secs_f64();
        let t = Instant::now();
        fs::write(
            config.out_dir.join(format!("merged_{}.dot", ids[i])),
            render_merged(&merged),
        )?;
        write_json(&config.out_dir.join(format!("merged_{}.json", ids[i])), &merged)?;
        timing.merge_construct_s += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let outlier = lift(&graphs[i])?;
        timing.compare_merge_s += t.elapsed().as_secs_f64();
        let t = Instant::now();
        let diff = compare(&merged, &outlier);
        timing.compare_compare_s += t.elapsed().as_secs_f64();
        let t = Instant::now();
        fs::write(config.out_dir.join(format!("diff_{}.dot", ids[i])), render_diff(&diff))?;
        write_json(&config.out_dir.join(format!("diff_{}.json", ids[i])), &diff)?;
        timing.compare_construct_s += t.elapsed().as_secs_f64();
        diffs.push((ids[i].clone(), diff));
    }

    if emit_timing {
        write_json(&config.out_dir.join("timing.json"), &timing)?;
    }
    Ok(PipelineOutput { graphs, embeddings, results, reports, diffs, timing })
}
