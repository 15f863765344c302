//! Property tests for the structural invariants of the graph operations.

mod common;

use std::collections::HashSet;

use depscope::depgraph::{
    load_depgraph, node_paths, prune_edges, to_undirected, NodePath,
};
use depscope::rootcause::get_bold;
use proptest::prelude::*;

fn tree_strategy() -> impl Strategy<Value = depscope::depgraph::DepGraph> {
    (any::<u64>(), 1usize..16).prop_map(|(seed, max_nodes)| {
        let mut rng = common::rng(seed);
        common::random_tree(&mut rng, "prop", max_nodes)
    })
}

proptest! {
    #[test]
    fn save_load_round_trips(g in tree_strategy()) {
        let json = serde_json::to_string(&g).unwrap();
        let back = load_depgraph(&json, true).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn prune_is_idempotent_and_monotone(g in tree_strategy(), t1 in 0.0f64..100.0, t2 in 0.0f64..100.0) {
        let once = prune_edges(&g, t1);
        prop_assert_eq!(&prune_edges(&once, t1), &once);

        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let loose = prune_edges(&g, lo);
        let tight = prune_edges(&g, hi);
        prop_assert!(tight.nodes.len() <= loose.nodes.len());
        prop_assert!(tight.edges.len() <= loose.edges.len());
        // Pruning harder from the looser graph gives the tighter one.
        prop_assert_eq!(prune_edges(&loose, hi), tight);
    }

    #[test]
    fn undirected_preserves_nodes_never_adds_edges(g in tree_strategy()) {
        let u = to_undirected(&g);
        prop_assert_eq!(u.labels.len(), g.nodes.len());
        prop_assert!(u.edges.len() <= g.edges.len());
    }

    #[test]
    fn node_paths_are_distinct(g in tree_strategy()) {
        let paths = node_paths(&g);
        prop_assert_eq!(paths.len(), g.nodes.len());
        let distinct: HashSet<String> =
            paths.values().map(NodePath::to_string_escaped).collect();
        prop_assert_eq!(distinct.len(), g.nodes.len());
    }

    #[test]
    fn node_path_serialization_round_trips(labels in prop::collection::vec("[a-z/\\\\#]{1,8}", 1..6)) {
        let p = NodePath(labels);
        prop_assert_eq!(NodePath::parse(&p.to_string_escaped()), p);
    }

    #[test]
    fn bold_is_monotone(a in -10.0f64..10.0, b in -10.0f64..10.0) {
        if a.abs() <= b.abs() {
            prop_assert!(get_bold(a) <= get_bold(b));
        } else {
            prop_assert!(get_bold(a) >= get_bold(b));
        }
    }

    #[test]
    fn knn_is_monotone_in_threshold(seed in any::<u64>(), t1 in 0.01f64..2.0, t2 in 0.01f64..2.0) {
        let mut rng = common::rng(seed);
        let points = common::random_points(&mut rng, 12, 2);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let loose = depscope::detection::knn_outliers(&points, 3, lo).unwrap();
        let tight = depscope::detection::knn_outliers(&points, 3, hi).unwrap();
        for (l, t) in loose.outlier_flags.iter().zip(&tight.outlier_flags) {
            // Raising the threshold never adds outliers.
            prop_assert!(*l || !*t);
        }
    }
}
