//! Point-of-interest graph of a building.
//!
//! Nodes are significant locations (doorways, corridor segments, stair
//! landings, exits); undirected edges are the walkable links between them.
//! The graph is immutable once built and can be shared across concurrent
//! replications.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hazard::{HazardPenalty, HazardState};

/// Dense node identifier, `0..N-1` within one graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: NodeId,
    pub x_cm: f64,
    pub y_cm: f64,
    pub floor: i32,
    /// Maximum number of persons the node releases per simulation tick.
    pub capacity: u32,
    pub is_exit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub length_cm: f64,
}

impl GraphEdge {
    /// The endpoint opposite to `node`.
    pub fn other(&self, node: NodeId) -> NodeId {
        if self.src == node {
            self.dst
        } else {
            self.src
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no edge between {0} and {1}")]
    MissingEdge(NodeId, NodeId),
    #[error("node {0} has no neighbours")]
    IsolatedNode(NodeId),
    #[error("invalid graph: {0}")]
    Invalid(String),
}

/// A node sequence plus its total cost. Empty when no exit is reachable.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub cost: f64,
}

impl Path {
    pub fn unreachable() -> Self {
        Path {
            nodes: Vec::new(),
            cost: f64::INFINITY,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildingGraph {
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
    /// Per node: (neighbour, edge index), sorted by neighbour id.
    adjacency: Vec<Vec<(NodeId, usize)>>,
    max_edge_length: f64,
}

impl BuildingGraph {
    /// Builds and validates a graph. Nodes may be given in any order but
    /// their ids must cover `0..N-1` exactly once.
    pub fn new(mut nodes: Vec<GraphNode>, edges: Vec<GraphEdge>) -> Result<Self, GraphError> {
        if nodes.is_empty() {
            return Err(GraphError::Invalid("graph has no nodes".into()));
        }
        nodes.sort_by_key(|n| n.id);
        for (i, n) in nodes.iter().enumerate() {
            if n.id.index() != i {
                return Err(GraphError::Invalid(format!(
                    "node ids must be dense 0..{}; found id {} at position {}",
                    nodes.len() - 1,
                    n.id,
                    i
                )));
            }
            if n.capacity < 1 {
                return Err(GraphError::Invalid(format!("node {} has capacity 0", n.id)));
            }
            if !(n.x_cm.is_finite() && n.y_cm.is_finite()) {
                return Err(GraphError::Invalid(format!("node {} has a non-finite position", n.id)));
            }
        }
        if !nodes.iter().any(|n| n.is_exit) {
            return Err(GraphError::Invalid("no exit node".into()));
        }

        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (k, e) in edges.iter().enumerate() {
            for end in [e.src, e.dst] {
                if end.index() >= nodes.len() {
                    return Err(GraphError::UnknownNode(end));
                }
            }
            if e.src == e.dst {
                return Err(GraphError::Invalid(format!("self-loop at node {}", e.src)));
            }
            if !(e.length_cm > 0.0 && e.length_cm.is_finite()) {
                return Err(GraphError::Invalid(format!(
                    "edge {}-{} has non-positive length {}",
                    e.src, e.dst, e.length_cm
                )));
            }
            adjacency[e.src.index()].push((e.dst, k));
            adjacency[e.dst.index()].push((e.src, k));
        }
        for (i, adj) in adjacency.iter_mut().enumerate() {
            adj.sort_by_key(|&(n, _)| n);
            if adj.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(GraphError::Invalid(format!("duplicate edge at node {i}")));
            }
        }
        let max_edge_length = edges.iter().map(|e| e.length_cm).fold(0.0, f64::max);
        let graph = BuildingGraph {
            nodes,
            edges,
            adjacency,
            max_edge_length,
        };

        for n in &graph.nodes {
            if !n.is_exit && graph.adjacency[n.id.index()].is_empty() {
                return Err(GraphError::IsolatedNode(n.id));
            }
        }
        let reach = graph.distances(&[NodeId(0)], |e| e.length_cm);
        if let Some(i) = reach.iter().position(|d| !d.is_finite()) {
            return Err(GraphError::Invalid(format!("graph is not connected (node {i} unreachable)")));
        }
        Ok(graph)
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, id: NodeId) -> Result<&GraphNode, GraphError> {
        self.nodes.get(id.index()).ok_or(GraphError::UnknownNode(id))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    pub fn is_exit(&self, id: NodeId) -> bool {
        self.nodes[id.index()].is_exit
    }

    pub fn exits(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(|n| n.is_exit).map(|n| n.id)
    }

    /// Neighbours of `id` with the connecting edge index, ascending by id.
    pub fn neighbours(&self, id: NodeId) -> &[(NodeId, usize)] {
        &self.adjacency[id.index()]
    }

    pub fn edge_between(&self, a: NodeId, b: NodeId) -> Option<usize> {
        let adj = self.adjacency.get(a.index())?;
        adj.binary_search_by_key(&b, |&(n, _)| n).ok().map(|i| adj[i].1)
    }

    pub fn edge(&self, index: usize) -> &GraphEdge {
        &self.edges[index]
    }

    /// Longest physical edge length; normalizer for effective safety.
    pub fn max_edge_length(&self) -> f64 {
        self.max_edge_length
    }

    /// Effective safety of an edge: its length normalized by the longest
    /// edge in the graph, in (0, 1].
    pub fn effective_safety(&self, edge: usize) -> f64 {
        self.edges[edge].length_cm / self.max_edge_length
    }

    /// Multi-source Dijkstra over arbitrary nonnegative edge weights.
    /// Infinite weights are treated as absent edges.
    pub fn distances<F>(&self, sources: &[NodeId], weight: F) -> Vec<f64>
    where
        F: Fn(&GraphEdge) -> f64,
    {
        let mut dist = vec![f64::INFINITY; self.nodes.len()];
        let mut heap = BinaryHeap::new();
        for &s in sources {
            dist[s.index()] = 0.0;
            heap.push(HeapItem { cost: 0.0, node: s });
        }
        while let Some(HeapItem { cost, node }) = heap.pop() {
            if cost > dist[node.index()] {
                continue;
            }
            for &(next, k) in &self.adjacency[node.index()] {
                let w = weight(&self.edges[k]);
                if !w.is_finite() {
                    continue;
                }
                let c = cost + w;
                if c < dist[next.index()] {
                    dist[next.index()] = c;
                    heap.push(HeapItem { cost: c, node: next });
                }
            }
        }
        dist
    }

    /// Minimum-cost path from `src` to the nearest exit under `weight`.
    /// Ties go to the smaller next node id at every hop.
    pub fn shortest_path_by<F>(&self, src: NodeId, weight: F) -> Result<Path, GraphError>
    where
        F: Fn(&GraphEdge) -> f64,
    {
        if !self.contains(src) {
            return Err(GraphError::UnknownNode(src));
        }
        let exits: Vec<NodeId> = self.exits().collect();
        let to_exit = self.distances(&exits, &weight);
        if !to_exit[src.index()].is_finite() {
            return Ok(Path::unreachable());
        }
        let mut nodes = vec![src];
        let mut cost = 0.0;
        let mut cur = src;
        while !self.is_exit(cur) {
            let here = to_exit[cur.index()];
            let tol = 1e-9 * here.max(1.0);
            let (next, w) = self.adjacency[cur.index()]
                .iter()
                .filter_map(|&(n, k)| {
                    let w = weight(&self.edges[k]);
                    (w.is_finite() && (to_exit[n.index()] + w - here).abs() <= tol).then_some((n, w))
                })
                .next()
                .expect("finite distance implies an optimal successor");
            cost += w;
            nodes.push(next);
            cur = next;
        }
        Ok(Path { nodes, cost })
    }

    /// Turning angle in degrees at `cur` when walking `prev -> cur -> next`,
    /// measured on the floor plane. Vertical moves (stairs) do not turn.
    pub fn rotation_angle(&self, prev: NodeId, cur: NodeId, next: NodeId) -> Result<f64, GraphError> {
        for n in [prev, cur, next] {
            self.node(n)?;
        }
        if self.edge_between(prev, cur).is_none() {
            return Err(GraphError::MissingEdge(prev, cur));
        }
        if self.edge_between(cur, next).is_none() {
            return Err(GraphError::MissingEdge(cur, next));
        }
        if prev == next {
            return Ok(180.0);
        }
        let (p, c, n) = (&self.nodes[prev.index()], &self.nodes[cur.index()], &self.nodes[next.index()]);
        let (ax, ay) = (c.x_cm - p.x_cm, c.y_cm - p.y_cm);
        let (bx, by) = (n.x_cm - c.x_cm, n.y_cm - c.y_cm);
        let (la, lb) = (ax.hypot(ay), bx.hypot(by));
        if la == 0.0 || lb == 0.0 {
            return Ok(0.0);
        }
        let cos = ((ax * bx + ay * by) / (la * lb)).clamp(-1.0, 1.0);
        Ok(cos.acos().to_degrees())
    }

    /// Sum of physical lengths along a node sequence.
    pub fn path_length(&self, path: &[NodeId]) -> Result<f64, GraphError> {
        path.windows(2)
            .map(|w| {
                self.edge_between(w[0], w[1])
                    .map(|k| self.edges[k].length_cm)
                    .ok_or(GraphError::MissingEdge(w[0], w[1]))
            })
            .sum()
    }
}

/// Hazard-penalized length of an edge at time `t`.
pub fn effective_length(edge: &GraphEdge, hazard: &HazardState, t: f64) -> f64 {
    hazard.penalty().apply(
        edge.length_cm,
        hazard.intensity(edge.src, t),
        hazard.intensity(edge.dst, t),
    )
}

/// Dijkstra baseline with full, current knowledge of the hazard.
pub fn shortest_path(graph: &BuildingGraph, src: NodeId, hazard: &HazardState, t: f64) -> Result<Path, GraphError> {
    graph.shortest_path_by(src, |e| effective_length(e, hazard, t))
}

/// Dijkstra where only some node intensities are known; unknown nodes are
/// treated as hazard-free.
pub fn shortest_path_known<F>(
    graph: &BuildingGraph,
    src: NodeId,
    penalty: &HazardPenalty,
    known_intensity: F,
) -> Result<Path, GraphError>
where
    F: Fn(NodeId) -> f64,
{
    graph.shortest_path_by(src, |e| {
        penalty.apply(e.length_cm, known_intensity(e.src), known_intensity(e.dst))
    })
}

#[derive(Debug, Clone, Copy)]
struct HeapItem {
    cost: f64,
    node: NodeId,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    // min-heap on cost, then on node id
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

#[cfg(test)]
pub(crate) mod test_graphs {
    use super::*;

    pub fn node(id: u32, x: f64, y: f64, exit: bool) -> GraphNode {
        GraphNode {
            id: NodeId(id),
            x_cm: x,
            y_cm: y,
            floor: 0,
            capacity: 1,
            is_exit: exit,
            label: None,
        }
    }

    pub fn edge(a: u32, b: u32, len: f64) -> GraphEdge {
        GraphEdge {
            src: NodeId(a),
            dst: NodeId(b),
            length_cm: len,
        }
    }

    /// A(0) - B(1) - Exit(2), 100 cm each.
    pub fn line3() -> BuildingGraph {
        BuildingGraph::new(
            vec![node(0, 0.0, 0.0, false), node(1, 100.0, 0.0, false), node(2, 200.0, 0.0, true)],
            vec![edge(0, 1, 100.0), edge(1, 2, 100.0)],
        )
        .unwrap()
    }
}
