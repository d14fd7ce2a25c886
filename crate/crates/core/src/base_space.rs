//! Finite weighted graphs standing in for the spatial length space X.
//!
//! Distances are shortest-path distances. A conformal weight `w` turns an edge
//! of length `len` between `u` and `v` into one of cost `len * (w(u) + w(v)) / 2`.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use petgraph::algo::{astar, connected_components, dijkstra};
use petgraph::graph::{NodeIndex, UnGraph};
use petgraph::visit::EdgeRef;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{GeomError, Result};

pub type NodeId = usize;

/// Connected, immutable weighted graph.
#[derive(Clone, Debug)]
pub struct BaseSpace {
    labels: Vec<String>,
    graph: UnGraph<(), f64>,
    edges: Vec<(NodeId, NodeId, f64)>,
    adjacency: Vec<Vec<(NodeId, f64)>>,
}

/// JSON form `{"nodes":[...], "edges":[[u,v,len],...]}`. Node identifiers may be
/// strings or integers; edges refer to them by value.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GraphDoc {
    pub nodes: Vec<Value>,
    pub edges: Vec<(Value, Value, f64)>,
}

fn label_of(v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(GeomError::InvalidGraph(format!("node identifier {other} is neither string nor number"))),
    }
}

impl BaseSpace {
    /// Builds a space from node labels and `(u, v, length)` edges.
    pub fn new(labels: Vec<String>, edges: Vec<(NodeId, NodeId, f64)>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(GeomError::InvalidGraph("no nodes".into()));
        }
        let mut graph = UnGraph::<(), f64>::with_capacity(n, edges.len());
        for _ in 0..n {
            graph.add_node(());
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v, len) in &edges {
            if u >= n || v >= n {
                return Err(GeomError::InvalidGraph(format!("edge ({u},{v}) references a missing node")));
            }
            if u == v {
                return Err(GeomError::InvalidGraph(format!("self loop at node {u}")));
            }
            if !(len > 0.0 && len.is_finite()) {
                return Err(GeomError::InvalidGraph(format!("edge ({u},{v}) has non-positive length {len}")));
            }
            if adjacency[u].iter().any(|&(w, _)| w == v) {
                return Err(GeomError::InvalidGraph(format!("duplicate edge ({u},{v})")));
            }
            graph.add_edge(NodeIndex::new(u), NodeIndex::new(v), len);
            adjacency[u].push((v, len));
            adjacency[v].push((u, len));
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(w, _)| w);
        }
        if connected_components(&graph) != 1 {
            return Err(GeomError::Disconnected);
        }
        Ok(Self { labels, graph, edges, adjacency })
    }

    /// Nodes labelled `0..n`.
    pub fn unlabeled(n: usize, edges: Vec<(NodeId, NodeId, f64)>) -> Result<Self> {
        Self::new((0..n).map(|i| i.to_string()).collect(), edges)
    }

    /// Path graph `0 - 1 - ... - (n-1)` with uniform edge length.
    pub fn path_graph(n: usize, edge_length: f64) -> Result<Self> {
        let edges = (1..n).map(|i| (i - 1, i, edge_length)).collect();
        Self::unlabeled(n, edges)
    }

    /// Cycle through nodes `0..lengths.len()`, edge `i` joining `i` and `i+1 mod n`.
    pub fn cycle_graph(lengths: &[f64]) -> Result<Self> {
        let n = lengths.len();
        let edges = lengths.iter().enumerate().map(|(i, &l)| (i, (i + 1) % n, l)).collect();
        Self::unlabeled(n, edges)
    }

    /// Rectangular grid with `rows * cols` nodes, node id `r * cols + c`.
    pub fn grid_graph(rows: usize, cols: usize, edge_length: f64) -> Result<Self> {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let id = r * cols + c;
                if c + 1 < cols {
                    edges.push((id, id + 1, edge_length));
                }
                if r + 1 < rows {
                    edges.push((id, id + cols, edge_length));
                }
            }
        }
        Self::unlabeled(rows * cols, edges)
    }

    pub fn from_doc(doc: &GraphDoc) -> Result<Self> {
        let labels = doc.nodes.iter().map(label_of).collect::<Result<Vec<_>>>()?;
        let index = |v: &Value| -> Result<NodeId> {
            let l = label_of(v)?;
            labels
                .iter()
                .position(|x| *x == l)
                .ok_or_else(|| GeomError::InvalidGraph(format!("edge references unknown node {l}")))
        };
        let mut edges = Vec::with_capacity(doc.edges.len());
        for (u, v, len) in &doc.edges {
            edges.push((index(u)?, index(v)?, *len));
        }
        Self::new(labels, edges)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GraphDoc = serde_json::from_str(text).map_err(|e| GeomError::InvalidGraph(e.to_string()))?;
        Self::from_doc(&doc)
    }

    pub fn to_doc(&self) -> GraphDoc {
        GraphDoc {
            nodes: self.labels.iter().map(|l| Value::String(l.clone())).collect(),
            edges: self
                .edges
                .iter()
                .map(|&(u, v, l)| (Value::String(self.labels[u].clone()), Value::String(self.labels[v].clone()), l))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn node_by_label(&self, label: &str) -> Option<NodeId> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn edges(&self) -> &[(NodeId, NodeId, f64)] {
        &self.edges
    }

    /// Neighbors of `x` sorted by id, with edge lengths.
    pub fn neighbors(&self, x: NodeId) -> &[(NodeId, f64)] {
        &self.adjacency[x]
    }

    pub fn edge_length(&self, x: NodeId, y: NodeId) -> Option<f64> {
        self.adjacency.get(x)?.iter().find(|&&(w, _)| w == y).map(|&(_, l)| l)
    }

    pub fn min_edge_length(&self) -> f64 {
        self.edges.iter().map(|e| e.2).fold(f64::INFINITY, f64::min)
    }

    pub fn check_node(&self, x: NodeId) -> Result<()> {
        if x < self.len() {
            Ok(())
        } else {
            Err(GeomError::UnknownNode(x))
        }
    }

    fn check_weight(&self, weight: &[f64]) -> Result<()> {
        if weight.len() != self.len() {
            return Err(GeomError::Domain(format!(
                "weight has {} entries for {} nodes",
                weight.len(),
                self.len()
            )));
        }
        if let Some((i, w)) = weight.iter().enumerate().find(|(_, w)| !(**w > 0.0 && w.is_finite())) {
            return Err(GeomError::Domain(format!("weight {w} at node {i} is not positive")));
        }
        Ok(())
    }

    /// Shortest-path distance in the base metric.
    pub fn shortest_distance(&self, x: NodeId, y: NodeId) -> Result<f64> {
        self.check_node(x)?;
        self.check_node(y)?;
        let map = dijkstra(&self.graph, NodeIndex::new(x), Some(NodeIndex::new(y)), |e| *e.weight());
        map.get(&NodeIndex::new(y)).copied().ok_or(GeomError::Unreachable { from: x, to: y })
    }

    /// Shortest-path distance under edge costs `len * (w(u) + w(v)) / 2`.
    pub fn conformal_distance(&self, weight: &[f64], x: NodeId, y: NodeId) -> Result<f64> {
        self.check_node(y)?;
        let d = self.conformal_distances_to(weight, x, &[y])?;
        if d[0].is_finite() {
            Ok(d[0])
        } else {
            Err(GeomError::Unreachable { from: x, to: y })
        }
    }

    /// Conformal distances from `x` to every node.
    pub fn conformal_distances_from(&self, weight: &[f64], x: NodeId) -> Result<Vec<f64>> {
        let all: Vec<NodeId> = (0..self.len()).collect();
        self.conformal_distances_to(weight, x, &all)
    }

    /// Conformal distances from `x` to each of `targets`; the search stops once
    /// every target is settled.
    pub fn conformal_distances_to(&self, weight: &[f64], x: NodeId, targets: &[NodeId]) -> Result<Vec<f64>> {
        self.check_node(x)?;
        self.check_weight(weight)?;
        for &t in targets {
            self.check_node(t)?;
        }
        let n = self.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        let mut wanted = vec![false; n];
        let mut remaining = 0usize;
        for &t in targets {
            if !wanted[t] {
                wanted[t] = true;
                remaining += 1;
            }
        }
        dist[x] = 0.0;
        let mut heap = BinaryHeap::from([Reverse(Key(0.0, x))]);
        while let Some(Reverse(Key(d, u))) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            if wanted[u] {
                remaining -= 1;
                if remaining == 0 {
                    break;
                }
            }
            for &(v, len) in &self.adjacency[u] {
                let nd = d + len * 0.5 * (weight[u] + weight[v]);
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Reverse(Key(nd, v)));
                }
            }
        }
        Ok(targets.iter().map(|&t| dist[t]).collect())
    }

    /// A conformal geodesic `x -> y` as a node sequence, with its cost.
    pub fn conformal_geodesic(&self, weight: &[f64], x: NodeId, y: NodeId) -> Result<(f64, Vec<NodeId>)> {
        self.check_node(x)?;
        self.check_node(y)?;
        self.check_weight(weight)?;
        astar(
            &self.graph,
            NodeIndex::new(x),
            |n| n.index() == y,
            |e| {
                let (a, b) = (e.source().index(), e.target().index());
                e.weight() * 0.5 * (weight[a] + weight[b])
            },
            |_| 0.0,
        )
        .map(|(c, p)| (c, p.into_iter().map(|n| n.index()).collect()))
        .ok_or(GeomError::Unreachable { from: x, to: y })
    }

    /// Length of a path: the sum of traversed edge lengths.
    pub fn path_length(&self, p: &SpacePath) -> Result<f64> {
        p.validate(self)?;
        Ok(p.nodes.windows(2).map(|w| self.edge_length(w[0], w[1]).unwrap_or(0.0)).sum())
    }

    /// Hop counts from `root` (breadth-first).
    pub fn hop_depths(&self, root: NodeId) -> Vec<usize> {
        let mut depth = vec![usize::MAX; self.len()];
        depth[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.adjacency[u] {
                if depth[v] == usize::MAX {
                    depth[v] = depth[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        depth
    }

    /// Nodes within `radius` hops of `x`, sorted by id (includes `x`).
    pub fn hop_ball(&self, x: NodeId, radius: usize) -> Vec<NodeId> {
        let mut seen = vec![false; self.len()];
        seen[x] = true;
        let mut frontier = vec![x];
        let mut out = vec![x];
        for _ in 0..radius {
            let mut next = Vec::new();
            for &u in &frontier {
                for &(v, _) in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        next.push(v);
                        out.push(v);
                    }
                }
            }
            frontier = next;
        }
        out.sort_unstable();
        out
    }
}

/// Heap key ordered by distance, then node id.
#[derive(Clone, Copy, PartialEq)]
struct Key(f64, NodeId);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Node sequence with optional per-segment speeds. Repeated consecutive nodes
/// are stationary segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpacePath {
    pub nodes: Vec<NodeId>,
    #[serde(default)]
    pub speeds: Option<Vec<f64>>,
}

impl SpacePath {
    pub fn new(nodes: Vec<NodeId>) -> Self {
        Self { nodes, speeds: None }
    }

    pub fn with_speeds(nodes: Vec<NodeId>, speeds: Vec<f64>) -> Self {
        Self { nodes, speeds: Some(speeds) }
    }

    pub fn validate(&self, space: &BaseSpace) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(GeomError::InvalidPath("empty path".into()));
        }
        for &x in &self.nodes {
            space.check_node(x)?;
        }
        for w in self.nodes.windows(2) {
            if w[0] != w[1] && space.edge_length(w[0], w[1]).is_none() {
                return Err(GeomError::InvalidPath(format!("nodes {} and {} are not adjacent", w[0], w[1])));
            }
        }
        if let Some(s) = &self.speeds {
            if s.len() + 1 != self.nodes.len() {
                return Err(GeomError::InvalidPath("one speed per segment required".into()));
            }
            if s.iter().any(|v| !(*v >= 0.0)) {
                return Err(GeomError::InvalidPath("negative speed".into()));
            }
        }
        Ok(())
    }
}
