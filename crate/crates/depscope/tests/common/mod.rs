//! Shared helpers for integration tests: random rooted-tree DepGraphs.

use depscope::depgraph::{DepGraph, DepGraphEdge, DepGraphNode};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random rooted tree with 1..=max_nodes nodes and labels drawn from a
/// small alphabet (collisions exercise sibling disambiguation).
pub fn random_tree(rng: &mut impl Rng, id: &str, max_nodes: usize) -> DepGraph {
    const LABELS: [&str; 6] = ["apache", "mysqld", "read", "disk", "network", "timer"];
    let n = rng.gen_range(1..=max_nodes.max(1));
    let mut nodes = Vec::with_capacity(n);
    let mut edges = Vec::new();
    for i in 0..n {
        nodes.push(DepGraphNode {
            id: format!("n{i}"),
            label: LABELS[rng.gen_range(0..LABELS.len())].to_string(),
            // Quarter-millisecond grid: additions stay exact in f64, so the
            // merge-algebra properties can assert bitwise equality.
            duration_ms: rng.gen_range(4..2000) as f64 * 0.25,
        });
        if i > 0 {
            let parent = rng.gen_range(0..i);
            edges.push(DepGraphEdge {
                src: format!("n{parent}"),
                dst: format!("n{i}"),
                wait_pct: rng.gen_range(0.0..=100.0),
            });
        }
    }
    let total = nodes[0].duration_ms;
    let g = DepGraph {
        request_id: id.to_string(),
        total_duration_ms: total,
        root: "n0".into(),
        nodes,
        edges,
    };
    g.validate().expect("generated tree must be valid");
    g
}

pub fn random_points(rng: &mut impl Rng, n: usize, dims: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}
