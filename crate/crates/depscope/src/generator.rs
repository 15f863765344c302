//! Seeded synthetic DepGraph datasets shaped like an Apache/PHP web-server
//! workload, with injected latency outliers and ground-truth labels.

use std::io::Write;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::depgraph::{DepGraph, DepGraphEdge, DepGraphNode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_requests: usize,
    pub outlier_fraction: f64,
    pub normal_duration_range_ms: (f64, f64),
    pub outlier_duration_range_ms: (f64, f64),
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_requests: 697,
            outlier_fraction: 15.0 / 697.0,
            normal_duration_range_ms: (60.0, 200.0),
            outlier_duration_range_ms: (300.0, 800.0),
            seed: 42,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_requests == 0 {
            return Err(Error::config("n_requests must be positive"));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::config("outlier_fraction must lie in [0, 1)"));
        }
        let (nl, nh) = self.normal_duration_range_ms;
        let (ol, oh) = self.outlier_duration_range_ms;
        if nl >= nh || ol >= oh {
            return Err(Error::config("duration range low must be below high"));
        }
        if ol <= nh {
            return Err(Error::config("duration ranges must not overlap"));
        }
        if ol <= 200.0 {
            return Err(Error::config("outlier durations must exceed 200 ms"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub graphs: Vec<DepGraph>,
    pub labels: Vec<bool>,
}

/// The anomaly decoration catalog. Each pattern grafts nodes whose labels
/// appear in no normal template, so structure-based detectors have signal
/// and root-cause diffs have nameable causes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnomalyKind {
    CpuContention,
    DiskWrite,
    SlowDatabase,
    NetworkStall,
}

pub const ANOMALY_KINDS: [AnomalyKind; 4] = [
    AnomalyKind::CpuContention,
    AnomalyKind::DiskWrite,
    AnomalyKind::SlowDatabase,
    AnomalyKind::NetworkStall,
];

/// Node labels that only anomaly decorations introduce.
pub fn decoration_labels() -> &'static [&'static str] {
    &[
        "waitcpu",
        "thread Xorg",
        "syscall_ftruncate",
        "block_dev_contention",
        "db_lock_wait",
        "net_retransmit",
    ]
}

struct Template {
    // (id, label, parent id, duration share of total, wait_pct, optional)
    nodes: &'static [(&'static str, &'static str, &'static str, f64, f64, bool)],
}

// Three normal web-server topologies. The root is always "thread apache2".
const TEMPLATES: [Template; 3] = [
    // Static page: reads and network.
    Template {
        nodes: &[
            ("read", "syscall_read", "root", 0.25, 30.0, false),
            ("disk", "disk", "read", 0.15, 55.0, false),
            ("net", "network", "root", 0.35, 45.0, false),
            ("timer", "timer", "root", 0.08, 10.0, true),
        ],
    },
    // Database-backed page.
    Template {
        nodes: &[
            ("mysqld", "thread mysqld", "root", 0.40, 55.0, false),
            ("dbread", "syscall_read", "mysqld", 0.20, 50.0, false),
            ("dbdisk", "disk", "mysqld", 0.12, 35.0, false),
            ("net", "network", "root", 0.25, 30.0, false),
            ("timer", "timer", "root", 0.06, 8.0, true),
        ],
    },
    // PHP application: database plus local reads.
    Template {
        nodes: &[
            ("mysqld", "thread mysqld", "root", 0.30, 40.0, false),
            ("dbread", "syscall_read", "mysqld", 0.15, 45.0, false),
            ("read", "syscall_read", "root", 0.20, 25.0, false),
            ("disk", "disk", "read", 0.10, 50.0, false),
            ("net", "network", "root", 0.20, 25.0, true),
        ],
    },
];

fn lognormal_in_range(rng: &mut impl Rng, low: f64, high: f64) -> f64 {
    // Right-skewed draw, rejection-sampled into [low, high].
    let mu = (low.ln() + high.ln()) / 2.0;
    let sigma = (high.ln() - low.ln()) / 4.0;
    loop {
        let z: f64 = {
            // Box-Muller; two uniforms per draw keeps the stream simple.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        };
        let v = (mu + sigma * z).exp();
        if (low..=high).contains(&v) {
            return v;
        }
    }
}

fn graph_rng(seed: u64, index: usize) -> ChaCha8Rng {
    // Per-graph substream so generation order never matters.
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn build_graph(
    request_id: String,
    total_ms: f64,
    template: &Template,
    anomaly: Option<AnomalyKind>,
    rng: &mut impl Rng,
) -> DepGraph {
    let mut nodes = vec![DepGraphNode {
        id: "root".into(),
        label: "thread apache2".into(),
        duration_ms: total_ms,
    }];
    let mut edges = Vec::new();
    for &(id, label, parent, share, wait, optional) in template.nodes {
        if optional && rng.gen_bool(0.3) {
            // Skip only when no descendant depends on this node.
            if template.nodes.iter().all(|n| n.2 != id) {
                continue;
            }
        }
        let jitter: f64 = rng.gen_range(0.8..1.2);
        nodes.push(DepGraphNode {
            id: id.into(),
            label: label.into(),
            duration_ms: total_ms * share * jitter,
        });
        edges.push(DepGraphEdge {
            src: parent.into(),
            dst: id.into(),
            wait_pct: (wait * rng.gen_range(0.85..1.15)).min(100.0),
        });
    }
    if let Some(kind) = anomaly {
        // Decoration edges stay well above the 3% prune threshold.
        let extra: &[(&str, &str, &str, f64)] = match kind {
            AnomalyKind::CpuContention => &[
                ("waitcpu", "waitcpu", "root", 0.45),
                ("xorg", "thread Xorg", "waitcpu", 0.40),
            ],
            AnomalyKind::DiskWrite => &[
                ("ftrunc", "syscall_ftruncate", "root", 0.45),
                ("blkcont", "block_dev_contention", "ftrunc", 0.40),
            ],
            AnomalyKind::SlowDatabase => &[
                ("mysqld_x", "thread mysqld", "root", 0.45),
                ("dblock", "db_lock_wait", "mysqld_x", 0.40),
            ],
            AnomalyKind::NetworkStall => &[
                ("net_x", "network", "root", 0.45),
                ("retrans", "net_retransmit", "net_x", 0.40),
            ],
        };
        for &(id, label, parent, share) in extra {
            nodes.push(DepGraphNode {
                id: id.into(),
                label: label.into(),
                duration_ms: total_ms * share * rng.gen_range(0.9..1.1),
            });
            edges.push(DepGraphEdge {
                src: parent.into(),
                dst: id.into(),
                wait_pct: rng.gen_range(25.0..60.0),
            });
        }
    }
    DepGraph {
        request_id,
        total_duration_ms: total_ms,
        root: "root".into(),
        nodes,
        edges,
    }
}

/// Generates a labeled dataset. Deterministic for a fixed config.
pub fn generate(config: &GeneratorConfig) -> Result<LabeledDataset> {
    config.validate()?;
    let n = config.n_requests;
    let n_outliers = ((n as f64) * config.outlier_fraction).round() as usize;

    // Outlier positions come from a dedicated master stream.
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut master);
    let mut is_outlier = vec![false; n];
    for &i in indices.iter().take(n_outliers) {
        is_outlier[i] = true;
    }

    let mut graphs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (i, &outlier) in is_outlier.iter().enumerate() {
        let mut rng = graph_rng(config.seed, i);
        let template = &TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
        let (low, high) = if outlier {
            config.outlier_duration_range_ms
        } else {
            config.normal_duration_range_ms
        };
        let total = lognormal_in_range(&mut rng, low, high);
        let anomaly = if outlier {
            Some(ANOMALY_KINDS[rng.gen_range(0..ANOMALY_KINDS.len())])
        } else {
            None
        };
        let g = build_graph(format!("req-{i:05}"), total, template, anomaly, &mut rng);
        debug_assert!(g.validate().is_ok());
        labels.push(g.total_duration_ms > 200.0);
        graphs.push(g);
    }
    Ok(LabeledDataset { graphs, labels })
}

/// Sidecar ground-truth file: CSV `request_id,is_outlier`.
pub fn write_labels<W: Write>(writer: &mut W, dataset: &LabeledDataset) -> Result<()> {
    writeln!(writer, "request_id,is_outlier")?;
    for (g, &label) in dataset.graphs.iter().zip(&dataset.labels) {
        writeln!(writer, "{},{}", g.request_id, label)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depgraph::write_depgraph_set;

    #[test]
    fn default_config_shape() {
        let ds = generate(&GeneratorConfig::default()).unwrap();
        assert_eq!(ds.graphs.len(), 697);
        assert_eq!(ds.labels.iter().filter(|&&l| l).count(), 15);
        for (g, &label) in ds.graphs.iter().zip(&ds.labels) {
            g.validate().unwrap();
            assert_eq!(label, g.total_duration_ms > 200.0);
        }
    }

    #[test]
    fn degenerate_single_normal_graph() {
        let config = GeneratorConfig {
            n_requests: 1,
            outlier_fraction: 0.0,
            seed: 7,
            ..Default::default()
        };
        let ds = generate(&config).unwrap();
        assert_eq!(ds.graphs.len(), 1);
        assert!(!ds.labels[0]);
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let config = GeneratorConfig::default();
        let (a, b) = (generate(&config).unwrap(), generate(&config).unwrap());
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        write_depgraph_set(&mut ba, &a.graphs).unwrap();
        write_depgraph_set(&mut bb, &b.graphs).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn outliers_carry_novel_labels() {
        let ds = generate(&GeneratorConfig::default()).unwrap();
        for (g, &label) in ds.graphs.iter().zip(&ds.labels) {
            let has_novel = g
                .nodes
                .iter()
                .any(|n| decoration_labels().contains(&n.label.as_str()));
            assert_eq!(label, has_novel, "request {}", g.request_id);
        }
    }

    #[test]
    fn duration_histogram_matches_profile() {
        let ds = generate(&GeneratorConfig::default()).unwrap();
        let under = ds
            .graphs
            .iter()
            .filter(|g| g.total_duration_ms < 200.0)
            .count();
        assert!(under as f64 / ds.graphs.len() as f64 >= 0.97);
    }

    #[test]
    fn rejects_overlapping_ranges() {
        let config = GeneratorConfig {
            outlier_duration_range_ms: (150.0, 800.0),
            ..Default::default()
        };
        assert!(generate(&config).is_err());
    }
}
