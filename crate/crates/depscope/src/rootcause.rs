//! Root-cause analysis: merge a cluster of DepGraphs into one representative
//! graph keyed by node paths, then diff an outlier against it. Shared nodes
//! get a 1..5 boldness level from the count-mean difference; single-sided
//! nodes get dashed (first-only) or dotted (second-only) styling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::depgraph::{node_paths, DepGraph, NodePath};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedNodeStats {
    pub path: NodePath,
    pub count: u64,
    /// Cumulative duration over all occurrences, ms.
    pub size: f64,
    pub min: f64,
    pub max: f64,
}

impl MergedNodeStats {
    fn absorb(&mut self, other: &MergedNodeStats) {
        self.count += other.count;
        self.size += other.size;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedDepGraph {
    pub n_graphs: u64,
    pub stats: BTreeMap<NodePath, MergedNodeStats>,
}

impl MergedDepGraph {
    /// Parent-child pairs implied by the path prefixes.
    pub fn edges(&self) -> Vec<(&NodePath, NodePath)> {
        self.stats
            .keys()
            .filter_map(|p| p.parent().map(|parent| (p, parent)))
            .collect()
    }

    /// Pools another merged graph into this one (the merge monoid).
    pub fn absorb(&mut self, other: &MergedDepGraph) {
        self.n_graphs += other.n_graphs;
        for (path, s) in &other.stats {
            self.stats
                .entry(path.clone())
                .and_modify(|mine| mine.absorb(s))
                .or_insert_with(|| s.clone());
        }
    }
}

/// Folds a cluster of DepGraphs into one representative graph. Per node
/// path: count of graphs containing it, cumulative size, min and max
/// occurrence durations.
pub fn merge_cluster(graphs: &[DepGraph]) -> Result<MergedDepGraph> {
    if graphs.is_empty() {
        return Err(Error::config("cannot merge an empty cluster"));
    }
    let mut stats: BTreeMap<NodePath, MergedNodeStats> = BTreeMap::new();
    for g in graphs {
        let index = g.node_index();
        for (id, path) in node_paths(g) {
            let duration = g.nodes[index[id.as_str()]].duration_ms;
            stats
                .entry(path.clone())
                .and_modify(|s| {
                    s.count += 1;
                    s.size += duration;
                    s.min = s.min.min(duration);
                    s.max = s.max.max(duration);
                })
                .or_insert(MergedNodeStats {
                    path,
                    count: 1,
                    size: duration,
                    min: duration,
                    max: duration,
                });
        }
    }
    Ok(MergedDepGraph { n_graphs: graphs.len() as u64, stats })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Both,
    FirstOnly,
    SecondOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub origin: Origin,
    /// Pooled count/size/min/max over both sides.
    pub merged: MergedNodeStats,
    /// means1 - means2; shared paths only.
    pub diff_mean: Option<f64>,
    /// getBold of the stddev-scaled mean difference; shared paths only.
    pub boldness: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffGraph {
    pub n_graphs_first: u64,
    pub n_graphs_second: u64,
    pub entries: BTreeMap<NodePath, DiffEntry>,
}

impl DiffGraph {
    pub fn paths_with_origin(&self, origin: Origin) -> Vec<&NodePath> {
        self.entries
            .iter()
            .filter(|(_, e)| e.origin == origin)
            .map(|(p, _)| p)
            .collect()
    }
}

/// Boldness bands over the absolute stddev-scaled mean difference.
pub fn get_bold(z: f64) -> u8 {
    let z = z.abs();
    if z < 0.5 {
        1
    } else if z < 1.0 {
        2
    } else if z < 2.0 {
        3
    } else if z < 3.0 {
        4
    } else {
        5
    }
}

fn population_sd(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Diffs two merged graphs. For every path present in both sides, the count
/// means (count / total count) are compared; the difference is scaled by the
/// standard deviation of the first side's counts and banded into boldness.
pub fn compare(first: &MergedDepGraph, second: &MergedDepGraph) -> DiffGraph {
    let left_counts: Vec<f64> = first.stats.values().map(|s| s.count as f64).collect();
    let left_sd = population_sd(&left_counts);

    let mut entries = BTreeMap::new();
    for (path, s1) in &first.stats {
        match second.stats.get(path) {
            Some(s2) => {
                let tot = (s1.count + s2.count) as f64;
                let mean1 = s1.count as f64 / tot;
                let mean2 = s2.count as f64 / tot;
                let diff = mean1 - mean2;
                // A zero difference is a zero signal even when the spread
                // of first-side counts is zero.
                let scaled = if diff == 0.0 {
                    0.0
                } else if left_sd > 0.0 {
                    diff / left_sd
                } else {
                    f64::INFINITY.copysign(diff)
                };
                let mut merged = s1.clone();
                merged.absorb(s2);
                entries.insert(
                    path.clone(),
                    DiffEntry {
                        origin: Origin::Both,
                        merged,
                        diff_mean: Some(diff),
                        boldness: Some(get_bold(scaled)),
                    },
                );
            }
            None => {
                entries.insert(
                    path.clone(),
                    DiffEntry {
                        origin: Origin::FirstOnly,
                        merged: s1.clone(),
                        diff_mean: None,
                        boldness: None,
                    },
                );
            }
        }
    }
    for (path, s2) in &second.stats {
        entries.entry(path.clone()).or_insert_with(|| DiffEntry {
            origin: Origin::SecondOnly,
            merged: s2.clone(),
            diff_mean: None,
            boldness: None,
        });
    }
    DiffGraph {
        n_graphs_first: first.n_graphs,
        n_graphs_second: second.n_graphs,
        entries,
    }
}

/// Lifts a single DepGraph to a merged graph so it can be compared.
pub fn lift(g: &DepGraph) -> Result<MergedDepGraph> {
    merge_cluster(std::slice::from_ref(g))
}
