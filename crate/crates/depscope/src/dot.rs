//! Deterministic Graphviz DOT emitters. Nodes are sorted by their node
//! path, so identical inputs render to byte-identical text.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::depgraph::{node_paths, DepGraph, NodePath};
use crate::rootcause::{DiffGraph, MergedDepGraph, Origin};

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn fmt_ms(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// DepGraph: nodes labeled "label\nduration ms", edges labeled with the
/// wait percentage.
pub fn render_depgraph(g: &DepGraph) -> String {
    let paths = node_paths(g);
    let by_path: BTreeMap<&NodePath, &str> =
        paths.iter().map(|(id, p)| (p, id.as_str())).collect();
    let index = g.node_index();
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out = String::from("digraph depgraph {\n");
    for (seq, (_, &id)) in by_path.iter().enumerate() {
        let n = &g.nodes[index[id]];
        ids.insert(id, seq);
        let _ = writeln!(
            out,
            "  n{seq} [label=\"{}\\n{} ms\"];",
            escape(&n.label),
            fmt_ms(n.duration_ms)
        );
    }
    let mut edges: Vec<(usize, usize, f64)> = g
        .edges
        .iter()
        .map(|e| (ids[e.src.as_str()], ids[e.dst.as_str()], e.wait_pct))
        .collect();
    edges.sort_by_key(|&(src, dst, _)| (src, dst));
    for (src, dst, pct) in edges {
        let _ = writeln!(out, "  n{src} -> n{dst} [label=\"{}%\"];", fmt_ms(pct));
    }
    out.push_str("}\n");
    out
}

fn path_ids(paths: impl Iterator<Item = NodePath> + Clone) -> BTreeMap<NodePath, usize> {
    paths.enumerate().map(|(i, p)| (p, i)).collect()
}

/// MergedDepGraph: nodes labeled "label\nsize / count / min-max"; edges
/// carry the aggregate percentage child.size / parent.size.
pub fn render_merged(m: &MergedDepGraph) -> String {
    let ids = path_ids(m.stats.keys().cloned());
    let mut out = String::from("digraph merged {\n");
    let _ = writeln!(out, "  // merged from {} graphs", m.n_graphs);
    for (path, s) in &m.stats {
        let _ = writeln!(
            out,
            "  n{} [label=\"{}\\n{} / {} / {}-{}\"];",
            ids[path],
            escape(path.leaf()),
            fmt_ms(s.size),
            s.count,
            fmt_ms(s.min),
            fmt_ms(s.max)
        );
    }
    for (path, s) in &m.stats {
        if let Some(parent) = path.parent() {
            if let Some(ps) = m.stats.get(&parent) {
                let pct = if ps.size > 0.0 { 100.0 * s.size / ps.size } else { 0.0 };
                let _ = writeln!(
                    out,
                    "  n{} -> n{} [label=\"{:.1}%\"];",
                    ids[&parent], ids[path], pct
                );
            }
        }
    }
    out.push_str("}\n");
    out
}

/// DiffGraph: solid edges with penwidth = boldness for shared paths;
/// dashed = first-only, dotted = second-only.
pub fn render_diff(d: &DiffGraph) -> String {
    let ids = path_ids(d.entries.keys().cloned());
    let mut out = String::from("digraph diff {\n");
    out.push_str("  // legend: solid = both sides (penwidth = boldness 1-5),\n");
    out.push_str("  //         dashed = first side only, dotted = second side only\n");
    let _ = writeln!(
        out,
        "  // first side: {} graph(s), second side: {} graph(s)",
        d.n_graphs_first, d.n_graphs_second
    );
    for (path, e) in &d.entries {
        let _ = writeln!(
            out,
            "  n{} [label=\"{}\\n{} / {} / {}-{}\"];",
            ids[path],
            escape(path.leaf()),
            fmt_ms(e.merged.size),
            e.merged.count,
            fmt_ms(e.merged.min),
            fmt_ms(e.merged.max)
        );
    }
    for (path, e) in &d.entries {
        if let Some(parent) = path.parent() {
            if !d.entries.contains_key(&parent) {
                continue;
            }
            let (style, penwidth) = match e.origin {
                Origin::Both => ("solid", e.boldness.unwrap_or(1)),
                Origin::FirstOnly => ("dashed", 1),
                Origin::SecondOnly => ("dotted", 1),
            };
            let _ = writeln!(
                out,
                "  n{} -> n{} [style={style}, penwidth={penwidth}];",
                ids[&parent], ids[path]
            );
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depgraph::{DepGraph, DepGraphEdge, DepGraphNode};
    use crate::rootcause::{compare, merge_cluster};

    fn single() -> DepGraph {
        DepGraph {
            request_id: "r".into(),
            total_duration_ms: 5.0,
            root: "a".into(),
            nodes: vec![DepGraphNode { id: "a".into(), label: "A".into(), duration_ms: 5.0 }],
            edges: vec![],
        }
    }

    #[test]
    fn single_node_dot() {
        let dot = render_depgraph(&single());
        assert!(dot.contains("n0 [label=\"A\\n5 ms\"]"));
        assert!(!dot.contains("->"));
    }

    #[test]
    fn depgraph_dot_is_deterministic() {
        let g = DepGraph {
            request_id: "r".into(),
            total_duration_ms: 10.0,
            root: "a".into(),
            nodes: vec![
                DepGraphNode { id: "a".into(), label: "A".into(), duration_ms: 10.0 },
                DepGraphNode { id: "b".into(), label: "B".into(), duration_ms: 4.0 },
            ],
            edges: vec![DepGraphEdge { src: "a".into(), dst: "b".into(), wait_pct: 40.0 }],
        };
        assert_eq!(render_depgraph(&g), render_depgraph(&g));
        assert!(render_depgraph(&g).contains("[label=\"40%\"]"));
    }

    #[test]
    fn self_diff_has_no_dashed_or_dotted() {
        let m = merge_cluster(&[single()]).unwrap();
        let dot = render_diff(&compare(&m, &m));
        assert!(!dot.contains("style=dashed"));
        assert!(!dot.contains("style=dotted"));
    }

    #[test]
    fn merged_dot_shows_stats() {
        let m = merge_cluster(&vec![single(); 3]).unwrap();
        let dot = render_merged(&m);
        assert!(dot.contains("A\\n15 / 3 / 5-5"));
    }
}
