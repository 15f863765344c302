//! Whole-graph embeddings: Weisfeiler-Lehman subtree features fed to a
//! PV-DBOW skip-gram model with negative sampling, so that structurally
//! similar graphs land near each other in the embedding space.

use std::collections::HashMap;
use std::io::Write;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::depgraph::{prune_edges, to_undirected, DepGraph, UndirectedGraph};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub dimensions: usize,
    pub wl_iterations: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negative_samples: usize,
    pub min_feature_count: usize,
    pub seed: u64,
    /// Appends a log-scale duration bucket to each node label before WL.
    pub duration_buckets: bool,
    /// Prune edges below this percentage before embedding; None disables.
    pub prune_threshold_pct: Option<f64>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dimensions: 64,
            wl_iterations: 2,
            epochs: 50,
            learning_rate: 0.025,
            negative_samples: 5,
            min_feature_count: 1,
            seed: 42,
            duration_buckets: false,
            prune_threshold_pct: Some(3.0),
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dimensions == 0 || self.epochs == 0 || self.negative_samples == 0 {
            return Err(Error::config("dimensions, epochs, negative_samples must be positive"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// Rooted-subtree signatures of one graph, one multiset per WL iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WLFeatureSet {
    pub per_iteration: Vec<Vec<String>>,
}

impl WLFeatureSet {
    pub fn all_features(&self) -> impl Iterator<Item = &str> {
        self.per_iteration.iter().flatten().map(String::as_str)
    }

    /// Sorted feature multiset, independent of node order.
    pub fn canonical(&self) -> Vec<Vec<String>> {
        self.per_iteration
            .iter()
            .map(|fs| {
                let mut v = fs.clone();
                v.sort_unstable();
                v
            })
            .collect()
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// One WL round: each node's new label hashes its old label together with
/// the sorted multiset of its neighbors' labels.
fn wl_round(labels: &[String], adj: &[Vec<usize>]) -> Vec<String> {
    labels
        .iter()
        .enumerate()
        .map(|(i, own)| {
            let mut neigh: Vec<&str> = adj[i].iter().map(|&j| labels[j].as_str()).collect();
            neigh.sort_unstable();
            let canon = format!("{own}|{}", neigh.join(","));
            format!("w{:016x}", fnv1a64(canon.as_bytes()))
        })
        .collect()
}

/// WL relabeling over `iterations` rounds; iteration 0 is the raw labels.
pub fn wl_relabel(g: &UndirectedGraph, iterations: usize) -> WLFeatureSet {
    let adj = g.neighbors();
    let mut per_iteration = vec![g.labels.clone()];
    for _ in 0..iterations {
        let next = wl_round(per_iteration.last().unwrap(), &adj);
        per_iteration.push(next);
    }
    WLFeatureSet { per_iteration }
}

fn duration_bucket(ms: f64) -> &'static str {
    if ms < 1.0 {
        "<1ms"
    } else if ms < 10.0 {
        "<10ms"
    } else if ms < 100.0 {
        "<100ms"
    } else if ms < 1000.0 {
        "<1000ms"
    } else {
        ">=1000ms"
    }
}

/// The full feature-extraction front end for one graph.
pub fn graph_features(g: &DepGraph, config: &EmbeddingConfig) -> WLFeatureSet {
    let pruned;
    let g = match config.prune_threshold_pct {
        Some(t) => {
            pruned = prune_edges(g, t);
            &pruned
        }
        None => g,
    };
    let mut u = to_undirected(g);
    if config.duration_buckets {
        for (label, node) in u.labels.iter_mut().zip(&g.nodes) {
            *label = format!("{label}@{}", duration_bucket(node.duration_ms));
        }
    }
    wl_relabel(&u, config.wl_iterations)
}

/// One embedding row per input graph, aligned with input order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub request_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub config: EmbeddingConfig,
    pub vocab_size: usize,
}

impl EmbeddingMatrix {
    pub fn dimensions(&self) -> usize {
        self.config.dimensions
    }

    /// CSV body: `request_id,v0..v{d-1}`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(w, "request_id")?;
        for d in 0..self.dimensions() {
            write!(w, ",v{d}")?;
        }
        writeln!(w)?;
        for (id, row) in self.request_ids.iter().zip(&self.rows) {
            write!(w, "{id}")?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<EmbeddingMatrix> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty embedding CSV".into()))?;
        let dims = header.split(',').count() - 1;
        let mut request_ids = Vec::new();
        let mut rows = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            request_ids.push(parts.next().unwrap_or_default().to_owned());
            let row: Vec<f64> = parts
                .map(|p| p.parse().map_err(|e| Error::Parse(format!("bad value {p:?}: {e}"))))
                .collect::<Result<_>>()?;
            if row.len() != dims {
                return Err(Error::Parse("ragged embedding CSV".into()));
            }
            rows.push(row);
        }
        Ok(EmbeddingMatrix {
            request_ids,
            rows,
            config: EmbeddingConfig { dimensions: dims, ..Default::default() },
            vocab_size: 0,
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Trains PV-DBOW embeddings: each graph vector learns to predict its own
/// WL features against negatively sampled ones. Deterministic for a fixed
/// seed (single-worker training loop).
pub fn train_embeddings(graphs: &[DepGraph], config: &EmbeddingConfig) -> Result<EmbeddingMatrix> {
    config.validate()?;
    if graphs.len() < 2 {
        return Err(Error::config("embedding training needs at least 2 graphs"));
    }

    let docs: Vec<Vec<String>> = graphs
        .iter()
        .map(|g| {
            graph_features(g, config)
                .all_features()
                .map(str::to_owned)
                .collect()
        })
        .collect();

    // Vocabulary over all feature strings, ordered by first appearance.
    let mut vocab: HashMap<&str, usize> = HashMap::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut ordered: Vec<&str> = Vec::new();
    for doc in &docs {
        for f in doc {
            match vocab.get(f.as_str()) {
                Some(&i) => counts[i] += 1,
                None => {
                    vocab.insert(f, ordered.len());
                    ordered.push(f);
                    counts.push(1);
                }
            }
        }
    }
    let keep: Vec<usize> = (0..ordered.len())
        .filter(|&i| counts[i] >= config.min_feature_count.max(1))
        .collect();
    if keep.is_empty() {
        return Err(Error::config("empty vocabulary after frequency filtering"));
    }
    let remap: HashMap<usize, usize> = keep.iter().enumerate().map(|(n, &o)| (o, n)).collect();
    let vocab_size = keep.len();
    let doc_ids: Vec<Vec<usize>> = docs
        .iter()
        .map(|doc| {
            doc.iter()
                .filter_map(|f| vocab.get(f.as_str()).and_then(|o| remap.get(o)).copied())
                .collect()
        })
        .collect();

    // Unigram^(3/4) negative-sampling distribution as a cumulative table.
    let mut cumulative = Vec::with_capacity(vocab_size);
    let mut acc = 0.0;
    for &old in &keep {
        acc += (counts[old] as f64).powf(0.75);
        cumulative.push(acc);
    }
    let total_mass = acc;

    let dims = config.dimensions;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut graph_vecs: Vec<Vec<f64>> = (0..graphs.len())
        .map(|_| (0..dims).map(|_| (rng.gen::<f64>() - 0.5) / dims as f64).collect())
        .collect();
    let mut feature_vecs: Vec<Vec<f64>> = vec![vec![0.0; dims]; vocab_size];

    let total_steps: usize = doc_ids.iter().map(Vec::len).sum::<usize>() * config.epochs;
    let mut step = 0usize;
    let mut grad = vec![0.0; dims];
    for _epoch in 0..config.epochs {
        for (gi, doc) in doc_ids.iter().enumerate() {
            for &target in doc {
                let lr = (config.learning_rate
                    * (1.0 - step as f64 / total_steps.max(1) as f64))
                    .max(config.learning_rate * 1e-4);
                step += 1;
                grad.iter_mut().for_each(|v| *v = 0.0);
                for s in 0..=config.negative_samples {
                    let (fi, label) = if s == 0 {
                        (target, 1.0)
                    } else {
                        let r = rng.gen::<f64>() * total_mass;
                        let fi = cumulative.partition_point(|&c| c <= r).min(vocab_size - 1);
                        if fi == target {
                            continue;
                        }
                        (fi, 0.0)
                    };
                    let dot: f64 = graph_vecs[gi]
                        .iter()
                        .zip(&feature_vecs[fi])
                        .map(|(a, b)| a * b)
                        .sum();
                    let g = (label - sigmoid(dot)) * lr;
                    for d in 0..dims {
                        grad[d] += g * feature_vecs[fi][d];
                        feature_vecs[fi][d] += g * graph_vecs[gi][d];
                    }
                }
                for d in 0..dims {
                    graph_vecs[gi][d] += grad[d];
                }
            }
        }
    }

    Ok(EmbeddingMatrix {
        request_ids: graphs.iter().map(|g| g.request_id.clone()).collect(),
        rows: graph_vecs,
        config: config.clone(),
        vocab_size,
    })
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Linear 2-D projection of the embedding rows onto the top two principal
/// directions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Projection {
    pub points: Vec<[f64; 2]>,
    /// Set when all rows are equal and no direction is defined.
    pub degenerate: bool,
}

pub fn project_2d(m: &EmbeddingMatrix) -> Result<Projection> {
    let n = m.rows.len();
    if n < 2 {
        return Err(Error::config("projection needs at least 2 rows"));
    }
    let d = m.rows[0].len();
    let mut mean = vec![0.0; d];
    for row in &m.rows {
        for (s, v) in mean.iter_mut().zip(row) {
            *s += v / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> = m
        .rows
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(v, mu)| v - mu).collect())
        .collect();
    let spread: f64 = centered.iter().flatten().map(|v| v * v).sum();
    if spread < 1e-24 {
        return Ok(Projection { points: vec![[0.0, 0.0]; n], degenerate: true });
    }

    // Covariance is d x d; d stays small (embedding dimensionality).
    let mut cov = nalgebra::DMatrix::<f64>::zeros(d, d);
    for row in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += row[i] * row[j] / n as f64;
            }
        }
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut dirs = [vec![0.0; d], vec![0.0; d]];
    for (axis, dir) in dirs.iter_mut().enumerate() {
        if axis < order.len() {
            let col = eig.eigenvectors.column(order[axis]);
            dir.iter_mut().zip(col.iter()).for_each(|(o, &v)| *o = v);
            // Deterministic sign: first nonzero coordinate is positive.
            if let Some(&v) = dir.iter().find(|v| v.abs() > 1e-12) {
                if v < 0.0 {
                    dir.iter_mut().for_each(|v| *v = -*v);
                }
            }
        }
    }
    let points = centered
        .iter()
        .map(|row| {
            let x: f64 = row.iter().zip(&dirs[0]).map(|(a, b)| a * b).sum();
            let y: f64 = row.iter().zip(&dirs[1]).map(|(a, b)| a * b).sum();
            [x, y]
        })
        .collect();
    Ok(Projection { points, degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depgraph::{DepGraph, DepGraphEdge, DepGraphNode};

    fn path_graph(labels: &[&str], id: &str) -> DepGraph {
        let nodes = labels
            .iter()
            .enumerate()
            .map(|(i, l)| DepGraphNode {
                id: format!("n{i}"),
                label: l.to_string(),
                duration_ms: 10.0,
            })
            .collect();
        let edges = (1..labels.len())
            .map(|i| DepGraphEdge {
                src: format!("n{}", i - 1),
                dst: format!("n{i}"),
                wait_pct: 50.0,
            })
            .collect();
        DepGraph {
            request_id: id.into(),
            total_duration_ms: 10.0 * labels.len() as f64,
            root: "n0".into(),
            nodes,
            edges,
        }
    }

    #[test]
    fn wl_zero_iterations_is_labels() {
        let u = UndirectedGraph { labels: vec!["A".into()], edges: vec![] };
        let fs = wl_relabel(&u, 0);
        assert_eq!(fs.per_iteration, vec![vec!["A".to_string()]]);
    }

    #[test]
    fn wl_one_round_on_path() {
        // Path A - B - A: the two endpoints see identical neighborhoods.
        let u = UndirectedGraph {
            labels: vec!["A".into(), "B".into(), "A".into()],
            edges: vec![(0, 1), (1, 2)],
        };
        let fs = wl_relabel(&u, 1);
        assert_eq!(fs.per_iteration[0], vec!["A", "B", "A"]);
        let iter1 = &fs.per_iteration[1];
        assert_eq!(iter1.len(), 3);
        assert_eq!(iter1[0], iter1[2]);
        assert_ne!(iter1[0], iter1[1]);
    }

    #[test]
    fn wl_invariant_under_permutation() {
        let u1 = UndirectedGraph {
            labels: vec!["A".into(), "B".into(), "C".into()],
            edges: vec![(0, 1), (1, 2)],
        };
        // Same graph, nodes listed in a different order.
        let u2 = UndirectedGraph {
            labels: vec!["C".into(), "A".into(), "B".into()],
            edges: vec![(0, 2), (1, 2)],
        };
        assert_eq!(wl_relabel(&u1, 3).canonical(), wl_relabel(&u2, 3).canonical());
    }

    #[test]
    fn training_shape_and_finiteness() {
        let graphs: Vec<DepGraph> = (0..10)
            .map(|i| path_graph(&["A", "B", "C"], &format!("g{i}")))
            .collect();
        let config = EmbeddingConfig { dimensions: 16, epochs: 5, ..Default::default() };
        let m = train_embeddings(&graphs, &config).unwrap();
        assert_eq!(m.rows.len(), 10);
        assert!(m.rows.iter().all(|r| r.len() == 16));
        assert!(m.rows.iter().flatten().all(|v| v.is_finite()));
        assert!(m.rows.iter().all(|r| r.iter().any(|v| *v != 0.0)));
    }

    #[test]
    fn identical_graphs_embed_nearby() {
        let mut graphs = vec![
            path_graph(&["A", "B", "C"], "g0"),
            path_graph(&["A", "B", "C"], "g1"),
        ];
        for i in 0..8 {
            graphs.push(path_graph(&["X", "Y"], &format!("h{i}")));
        }
        let m = train_embeddings(&graphs, &EmbeddingConfig::default()).unwrap();
        assert!(cosine(&m.rows[0], &m.rows[1]) >= 0.9);
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let graphs: Vec<DepGraph> = (0..6)
            .map(|i| path_graph(&["A", "B"], &format!("g{i}")))
            .collect();
        let config = EmbeddingConfig { epochs: 10, ..Default::default() };
        let a = train_embeddings(&graphs, &config).unwrap();
        let b = train_embeddings(&graphs, &config).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn rejects_tiny_corpus() {
        let graphs = vec![path_graph(&["A"], "g0")];
        assert!(train_embeddings(&graphs, &EmbeddingConfig::default()).is_err());
    }

    fn matrix(rows: Vec<Vec<f64>>) -> EmbeddingMatrix {
        let d = rows[0].len();
        EmbeddingMatrix {
            request_ids: (0..rows.len()).map(|i| format!("r{i}")).collect(),
            rows,
            config: EmbeddingConfig { dimensions: d, ..Default::default() },
            vocab_size: 0,
        }
    }

    #[test]
    fn projection_of_2d_preserves_distances() {
        let m = matrix(vec![
            vec![1.0, 2.0],
            vec![-1.0, 0.5],
            vec![0.0, -2.5],
            vec![2.0, 1.0],
        ]);
        let p = project_2d(&m).unwrap();
        assert!(!p.degenerate);
        for i in 0..4 {
            for j in 0..4 {
                let orig = ((m.rows[i][0] - m.rows[j][0]).powi(2)
                    + (m.rows[i][1] - m.rows[j][1]).powi(2))
                .sqrt();
                let proj = ((p.points[i][0] - p.points[j][0]).powi(2)
                    + (p.points[i][1] - p.points[j][1]).powi(2))
                .sqrt();
                assert!((orig - proj).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn projection_degenerate_case() {
        let m = matrix(vec![vec![1.0, 2.0, 3.0]; 5]);
        let p = project_2d(&m).unwrap();
        assert!(p.degenerate);
        assert!(p.points.iter().all(|pt| pt == &[0.0, 0.0]));
    }

    #[test]
    fn projection_collinear_rows() {
        // Rank-1 data in 4-D: second principal coordinate vanishes.
        let base = [1.0, -2.0, 0.5, 3.0];
        let m = matrix((0..3).map(|i| base.iter().map(|v| v * i as f64).collect()).collect());
        let p = project_2d(&m).unwrap();
        assert!(p.points.iter().all(|pt| pt[1].abs() < 1e-9));
    }

    #[test]
    fn csv_round_trip() {
        let m = matrix(vec![vec![1.5, -2.25], vec![0.0, 3.125]]);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = EmbeddingMatrix::read_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.rows, m.rows);
        assert_eq!(back.request_ids, m.request_ids);
    }
}
