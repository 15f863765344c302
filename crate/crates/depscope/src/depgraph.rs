//! Waiting-dependency graph (DepGraph) model: a rooted DAG of execution
//! states for one request. Nodes carry a label and an aggregated duration in
//! milliseconds; an edge carries the percentage of the source's time spent
//! waiting on the destination.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepGraphNode {
    pub id: String,
    pub label: String,
    pub duration_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepGraphEdge {
    pub src: String,
    pub dst: String,
    pub wait_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepGraph {
    pub request_id: String,
    pub total_duration_ms: f64,
    pub root: String,
    pub nodes: Vec<DepGraphNode>,
    pub edges: Vec<DepGraphEdge>,
}

impl DepGraph {
    /// Index of each node id into `nodes`.
    pub fn node_index(&self) -> HashMap<&str, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect()
    }

    /// Children of each node, in edge document order.
    pub fn children(&self) -> HashMap<&str, Vec<&str>> {
        let mut out: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in &self.edges {
            out.entry(e.src.as_str()).or_default().push(e.dst.as_str());
        }
        out
    }

    /// Parents of each node, in edge document order.
    pub fn parents(&self) -> HashMap<&str, Vec<&str>> {
        let mut out: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in &self.edges {
            out.entry(e.dst.as_str()).or_default().push(e.src.as_str());
        }
        out
    }

    /// Checks every structural invariant: positive durations, non-empty
    /// labels, wait percentages in range, no self-loops, known endpoints,
    /// acyclicity, and reachability of every node from the root.
    pub fn validate(&self) -> Result<()> {
        if self.total_duration_ms < 0.0 {
            return Err(Error::validation(format!(
                "request {}: negative total_duration_ms",
                self.request_id
            )));
        }
        let mut seen = HashSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id.as_str()) {
                return Err(Error::validation(format!("duplicate node id {:?}", n.id)));
            }
            if n.label.is_empty() {
                return Err(Error::validation(format!("node {:?} has an empty label", n.id)));
            }
            if n.duration_ms < 0.0 || !n.duration_ms.is_finite() {
                return Err(Error::validation(format!(
                    "node {:?} has invalid duration {}",
                    n.id, n.duration_ms
                )));
            }
        }
        if !seen.contains(self.root.as_str()) {
            return Err(Error::validation(format!("root {:?} is not a node", self.root)));
        }
        for e in &self.edges {
            if e.src == e.dst {
                return Err(Error::validation(format!("self-loop on node {:?}", e.src)));
            }
            if !(0.0..=100.0).contains(&e.wait_pct) {
                return Err(Error::validation(format!(
                    "edge {:?} -> {:?} has wait_pct {} outside [0, 100]",
                    e.src, e.dst, e.wait_pct
                )));
            }
            for end in [&e.src, &e.dst] {
                if !seen.contains(end.as_str()) {
                    return Err(Error::validation(format!(
                        "edge {:?} -> {:?} references unknown node {:?}",
                        e.src, e.dst, end
                    )));
                }
            }
        }
        self.check_acyclic()?;
        // Reachability sweep from the root.
        let reachable = self.reachable_from_root();
        for n in &self.nodes {
            if !reachable.contains(n.id.as_str()) {
                return Err(Error::validation(format!("unreachable node {:?}", n.id)));
            }
        }
        Ok(())
    }

    fn reachable_from_root(&self) -> HashSet<&str> {
        let children = self.children();
        let mut reachable = HashSet::new();
        let mut queue = VecDeque::new();
        if self.nodes.iter().any(|n| n.id == self.root) {
            reachable.insert(self.root.as_str());
            queue.push_back(self.root.as_str());
        }
        while let Some(id) = queue.pop_front() {
            for &c in children.get(id).into_iter().flatten() {
                if reachable.insert(c) {
                    queue.push_back(c);
                }
            }
        }
        reachable
    }

    fn check_acyclic(&self) -> Result<()> {
        // Kahn's algorithm; leftovers with nonzero in-degree form a cycle.
        let mut indeg: HashMap<&str, usize> =
            self.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
        for e in &self.edges {
            *indeg.get_mut(e.dst.as_str()).unwrap() += 1;
        }
        let children = self.children();
        let mut queue: VecDeque<&str> = self
            .nodes
            .iter()
            .filter(|n| indeg[n.id.as_str()] == 0)
            .map(|n| n.id.as_str())
            .collect();
        let mut removed = 0usize;
        while let Some(id) = queue.pop_front() {
            removed += 1;
            for &c in children.get(id).into_iter().flatten() {
                let d = indeg.get_mut(c).unwrap();
                *d -= 1;
                if *d == 0 {
                    queue.push_back(c);
                }
            }
        }
        if removed != self.nodes.len() {
            let mut cyclic: Vec<&str> = indeg
                .iter()
                .filter(|(_, &d)| d > 0)
                .map(|(&id, _)| id)
                .collect();
            cyclic.sort_unstable();
            return Err(Error::validation(format!(
                "cycle involving nodes {:?}",
                cyclic
            )));
        }
        Ok(())
    }

    /// Node ids in a topological order (root first). Assumes `validate` passed.
    pub fn topo_order(&self) -> Vec<&str> {
        let mut indeg: HashMap<&str, usize> =
            self.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
        for e in &self.edges {
            *indeg.get_mut(e.dst.as_str()).unwrap() += 1;
        }
        let children = self.children();
        let mut queue: VecDeque<&str> = self
            .nodes
            .iter()
            .filter(|n| indeg[n.id.as_str()] == 0)
            .map(|n| n.id.as_str())
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(id) = queue.pop_front() {
            order.push(id);
            for &c in children.get(id).into_iter().flatten() {
                let d = indeg.get_mut(c).unwrap();
                *d -= 1;
                if *d == 0 {
                    queue.push_back(c);
                }
            }
        }
        order
    }
}

const GRAPH_KEYS: &[&str] = &["request_id", "total_duration_ms", "root", "nodes", "edges"];
const NODE_KEYS: &[&str] = &["id", "label", "duration_ms"];
const EDGE_KEYS: &[&str] = &["src", "dst", "wait_pct"];

fn reject_unknown(value: &serde_json::Value, allowed: &[&str], what: &str) -> Result<()> {
    if let Some(map) = value.as_object() {
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Parse(format!("unknown key {key:?} in {what}")));
            }
        }
    }
    Ok(())
}

/// Parses and validates one DepGraph from a JSON document. In strict mode
/// unknown keys are rejected; otherwise they are ignored.
pub fn load_depgraph(json: &str, strict: bool) -> Result<DepGraph> {
    let value: serde_json::Value =
        serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))?;
    if strict {
        reject_unknown(&value, GRAPH_KEYS, "graph")?;
        for (arr, keys, what) in [("nodes", NODE_KEYS, "node"), ("edges", EDGE_KEYS, "edge")] {
            for item in value.get(arr).and_then(|v| v.as_array()).into_iter().flatten() {
                reject_unknown(item, keys, what)?;
            }
        }
    }
    let graph: DepGraph =
        serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
    graph.validate()?;
    Ok(graph)
}

/// Loads a newline-delimited set of DepGraphs.
pub fn load_depgraph_set<R: BufRead>(reader: R, strict: bool) -> Result<Vec<DepGraph>> {
    let mut graphs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let g = load_depgraph(&line, strict)
            .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
        graphs.push(g);
    }
    Ok(graphs)
}

/// Writes graphs in the newline-delimited set format.
pub fn write_depgraph_set<W: Write>(writer: &mut W, graphs: &[DepGraph]) -> Result<()> {
    for g in graphs {
        serde_json::to_writer(&mut *writer, g).map_err(|e| Error::Parse(e.to_string()))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Removes every edge below `threshold_pct`, then sweeps away nodes no
/// longer reachable from the root. The root is always retained.
pub fn prune_edges(g: &DepGraph, threshold_pct: f64) -> DepGraph {
    let mut pruned = g.clone();
    pruned.edges.retain(|e| e.wait_pct >= threshold_pct);
    let reachable = pruned.reachable_from_root();
    let reachable: HashSet<String> = reachable.into_iter().map(str::to_owned).collect();
    pruned.nodes.retain(|n| reachable.contains(&n.id) || n.id == pruned.root);
    pruned
        .edges
        .retain(|e| reachable.contains(&e.src) && reachable.contains(&e.dst));
    pruned
}

/// An undirected labeled graph, the embedding front end's input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct UndirectedGraph {
    pub labels: Vec<String>,
    /// Unordered pairs of indices into `labels`, stored as (min, max),
    /// sorted and deduplicated.
    pub edges: Vec<(usize, usize)>,
}

impl UndirectedGraph {
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.labels.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }
}

/// Drops edge direction and wait percentages; antiparallel edge pairs
/// collapse to a single undirected edge.
pub fn to_undirected(g: &DepGraph) -> UndirectedGraph {
    let index = g.node_index();
    let mut edges: Vec<(usize, usize)> = g
        .edges
        .iter()
        .map(|e| {
            let a = index[e.src.as_str()];
            let b = index[e.dst.as_str()];
            (a.min(b), a.max(b))
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    UndirectedGraph {
        labels: g.nodes.iter().map(|n| n.label.clone()).collect(),
        edges,
    }
}

/// Root-to-node label sequence; the identity key for merging and diffing.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodePath(pub Vec<String>);

impl NodePath {
    pub fn parent(&self) -> Option<NodePath> {
        if self.0.len() <= 1 {
            None
        } else {
            Some(NodePath(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn leaf(&self) -> &str {
        self.0.last().map(String::as_str).unwrap_or("")
    }

    pub fn child(&self, label: &str) -> NodePath {
        let mut v = self.0.clone();
        v.push(label.to_owned());
        NodePath(v)
    }

    /// "/"-joined form; "/" inside a label is escaped as "\/".
    pub fn to_string_escaped(&self) -> String {
        self.0
            .iter()
            .map(|s| s.replace('\\', "\\\\").replace('/', "\\/"))
            .collect::<Vec<_>>()
            .join("/")
    }

    pub fn parse(s: &str) -> NodePath {
        let mut parts = Vec::new();
        let mut cur = String::new();
        let mut chars = s.chars();
        while let Some(c) = chars.next() {
            match c {
                '\\' => {
                    if let Some(n) = chars.next() {
                        cur.push(n);
                    }
                }
                '/' => {
                    parts.push(std::mem::take(&mut cur));
                }
                _ => cur.push(c),
            }
        }
        parts.push(cur);
        NodePath(parts)
    }
}

impl std::fmt::Display for NodePath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_string_escaped())
    }
}

impl Serialize for NodePath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string_escaped())
    }
}

impl<'de> Deserialize<'de> for NodePath {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(NodePath::parse(&s))
    }
}

/// Labels after sibling disambiguation: same-label siblings under one parent
/// get "#2", "#3", ... suffixes in document order, so path keys stay unique.
pub fn display_labels(g: &DepGraph) -> HashMap<String, String> {
    let index = g.node_index();
    let children = g.children();
    let mut out: HashMap<String, String> = HashMap::new();
    let mut parent_ids: Vec<&str> = vec![g.root.as_str()];
    parent_ids.extend(g.nodes.iter().map(|n| n.id.as_str()).filter(|&id| id != g.root));
    for pid in parent_ids {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for &cid in children.get(pid).into_iter().flatten() {
            let label = g.nodes[index[cid]].label.as_str();
            let k = seen.entry(label).or_insert(0);
            *k += 1;
            // First parent in document order wins for diamond children.
            out.entry(cid.to_owned()).or_insert_with(|| {
                if *k == 1 {
                    label.to_owned()
                } else {
                    format!("{label}#{k}")
                }
            });
        }
    }
    out.insert(g.root.clone(), g.nodes[index[g.root.as_str()]].label.clone());
    out
}

/// Path of every node from the root. Diamond nodes take the
/// lexicographically smallest parent path.
pub fn node_paths(g: &DepGraph) -> BTreeMap<String, NodePath> {
    let labels = display_labels(g);
    let parents = g.parents();
    let mut paths: HashMap<&str, NodePath> = HashMap::new();
    for id in g.topo_order() {
        let label = labels[id].as_str();
        if id == g.root {
            paths.insert(id, NodePath(vec![label.to_owned()]));
            continue;
        }
        let best = parents
            .get(id)
            .into_iter()
            .flatten()
            .filter_map(|p| paths.get(p))
            .min()
            .cloned();
        if let Some(parent_path) = best {
            paths.insert(id, parent_path.child(label));
        }
    }
    paths
        .into_iter()
        .map(|(id, p)| (id.to_owned(), p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: &str, label: &str, d: f64) -> DepGraphNode {
        DepGraphNode { id: id.into(), label: label.into(), duration_ms: d }
    }

    fn edge(src: &str, dst: &str, pct: f64) -> DepGraphEdge {
        DepGraphEdge { src: src.into(), dst: dst.into(), wait_pct: pct }
    }

    fn graph(nodes: Vec<DepGraphNode>, edges: Vec<DepGraphEdge>) -> DepGraph {
        DepGraph {
            request_id: "r1".into(),
            total_duration_ms: 100.0,
            root: nodes[0].id.clone(),
            nodes,
            edges,
        }
    }

    const THREE_NODE_DOC: &str = r#"{"request_id":"r1","total_duration_ms":100,
        "root":"a","nodes":[{"id":"a","label":"A","duration_ms":100},
        {"id":"b","label":"B","duration_ms":60},{"id":"c","label":"C","duration_ms":40}],
        "edges":[{"src":"a","dst":"b","wait_pct":60},{"src":"a","dst":"c","wait_pct":40}]}"#;

    #[test]
    fn loads_three_node_document() {
        let g = load_depgraph(THREE_NODE_DOC, true).unwrap();
        assert_eq!(g.nodes.len(), 3);
        assert_eq!(g.edges.len(), 2);
        assert_eq!(g.root, "a");
    }

    #[test]
    fn rejects_cycle() {
        let doc = THREE_NODE_DOC.replace(
            r#"{"src":"a","dst":"c","wait_pct":40}"#,
            r#"{"src":"a","dst":"c","wait_pct":40},{"src":"b","dst":"a","wait_pct":10}"#,
        );
        let err = load_depgraph(&doc, false).unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn rejects_unreachable_node() {
        let doc = THREE_NODE_DOC.replace(
            r#"{"id":"c","label":"C","duration_ms":40}"#,
            r#"{"id":"c","label":"C","duration_ms":40},{"id":"d","label":"D","duration_ms":1}"#,
        );
        let err = load_depgraph(&doc, false).unwrap_err();
        assert!(err.to_string().contains("unreachable node \"d\""), "{err}");
    }

    #[test]
    fn strict_mode_rejects_unknown_keys() {
        let doc = THREE_NODE_DOC.replace(r#""request_id":"r1","#, r#""request_id":"r1","extra":1,"#);
        assert!(load_depgraph(&doc, true).is_err());
        assert!(load_depgraph(&doc, false).is_ok());
    }

    #[test]
    fn rejects_negative_duration_and_empty_label() {
        let g = graph(vec![node("a", "A", -1.0)], vec![]);
        assert!(g.validate().is_err());
        let g = graph(vec![node("a", "", 1.0)], vec![]);
        assert!(g.validate().is_err());
    }

    #[test]
    fn prune_at_zero_is_identity() {
        let g = load_depgraph(THREE_NODE_DOC, true).unwrap();
        assert_eq!(prune_edges(&g, 0.0), g);
    }

    #[test]
    fn prune_removes_low_edge_and_node() {
        let g = graph(
            vec![node("a", "A", 100.0), node("b", "B", 2.0), node("c", "C", 80.0)],
            vec![edge("a", "b", 2.0), edge("a", "c", 80.0)],
        );
        let p = prune_edges(&g, 3.0);
        assert_eq!(p.edges.len(), 1);
        assert!(p.nodes.iter().all(|n| n.id != "b"));
    }

    #[test]
    fn prune_sweeps_transitively_unreachable() {
        let g = graph(
            vec![
                node("a", "A", 100.0),
                node("b", "B", 50.0),
                node("c", "C", 2.0),
                node("d", "D", 48.0),
            ],
            vec![edge("a", "b", 50.0), edge("b", "c", 2.0), edge("b", "d", 48.0)],
        );
        let p = prune_edges(&g, 3.0);
        let ids: Vec<&str> = p.nodes.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "d"]);
        assert_eq!(p.edges.len(), 2);
    }

    #[test]
    fn undirected_collapses_antiparallel() {
        // Antiparallel pairs are not valid DepGraphs (cycle), but
        // to_undirected is defined on the raw edge list.
        let g = graph(
            vec![node("a", "A", 1.0), node("b", "B", 1.0)],
            vec![edge("a", "b", 10.0), edge("b", "a", 10.0)],
        );
        let u = to_undirected(&g);
        assert_eq!(u.edges, vec![(0, 1)]);
        assert_eq!(u.labels.len(), 2);
    }

    #[test]
    fn paths_for_chain() {
        let g = graph(
            vec![node("a", "A", 1.0), node("b", "B", 1.0), node("c", "C", 1.0)],
            vec![edge("a", "b", 10.0), edge("b", "c", 10.0)],
        );
        let paths = node_paths(&g);
        assert_eq!(paths["a"].to_string_escaped(), "A");
        assert_eq!(paths["b"].to_string_escaped(), "A/B");
        assert_eq!(paths["c"].to_string_escaped(), "A/B/C");
    }

    #[test]
    fn diamond_takes_smallest_parent_path() {
        let g = graph(
            vec![
                node("a", "A", 1.0),
                node("c", "C", 1.0),
                node("b", "B", 1.0),
                node("d", "D", 1.0),
            ],
            vec![
                edge("a", "c", 10.0),
                edge("a", "b", 10.0),
                edge("b", "d", 10.0),
                edge("c", "d", 10.0),
            ],
        );
        let paths = node_paths(&g);
        assert_eq!(paths["d"].to_string_escaped(), "A/B/D");
    }

    #[test]
    fn sibling_labels_disambiguated() {
        let g = graph(
            vec![node("a", "A", 1.0), node("b1", "B", 1.0), node("b2", "B", 1.0)],
            vec![edge("a", "b1", 10.0), edge("a", "b2", 10.0)],
        );
        let paths = node_paths(&g);
        assert_eq!(paths["b1"].to_string_escaped(), "A/B");
        assert_eq!(paths["b2"].to_string_escaped(), "A/B#2");
    }

    #[test]
    fn path_escaping_round_trips() {
        let p = NodePath(vec!["a/b".into(), "c\\d".into(), "e".into()]);
        let s = p.to_string_escaped();
        assert_eq!(NodePath::parse(&s), p);
    }

    #[test]
    fn set_round_trip() {
        let g = load_depgraph(THREE_NODE_DOC, true).unwrap();
        let mut buf = Vec::new();
        write_depgraph_set(&mut buf, std::slice::from_ref(&g)).unwrap();
        let back = load_depgraph_set(&buf[..], true).unwrap();
        assert_eq!(back, vec![g]);
    }
}
