//! Road network model: directed single-lane roads, stations, four-way
//! signal-free intersections, and travel requests.
//!
//! An intersection is a single graph node. Its four arms lead to the
//! neighboring nodes listed in `inlets`/`outlets`; which of the twelve cell
//! paths a vehicle takes is decided by the node it came from and the node it
//! leaves towards.

mod generate;
pub mod geometry;
mod scenario;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{build_grid, generate_requests, generate_scenario, DemandConfig, GridConfig};
pub use geometry::{build_intersection_geometry, Arm, ConflictPoint, IntersectionGeometry, IntersectionPath, PathId, Turn};
pub use scenario::{EdgeRecord, IntersectionRecord, PathRecord, Scenario, ScenarioFile, ScenarioLoadError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntersectionId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl EdgeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl IntersectionId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("edge {0} -> {1} references a missing node")]
    DanglingEdge(NodeId, NodeId),
    #[error("self-loop at node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(NodeId, NodeId),
    #[error("edge {0} -> {1} has non-positive length {2}")]
    BadLength(NodeId, NodeId, f64),
    #[error("node ids must be dense and ordered, found {found} at position {pos}")]
    NodeOrder { pos: usize, found: NodeId },
    #[error("station {0} lacks an incoming or outgoing edge")]
    IsolatedStation(NodeId),
    #[error("intersection {0:?}: {1}")]
    BadIntersection(IntersectionId, String),
    #[error("junction approach length {0} is not a finite non-negative number")]
    BadApproach(f64),
    #[error("road {0} -> {1} of length {2} is not longer than the approach lane ahead of {1}")]
    ShortApproachRoad(NodeId, NodeId, f64),
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error("invalid request {0}: {1}")]
    BadRequest(u32, String),
    #[error("node {0} is not reachable from and back to every station")]
    Unreachable(NodeId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    /// Plain road node without a cell: a bend, a T-junction on the boundary,
    /// or a midpoint of a subdivided road. Merges here are coordinated by
    /// rear-end safety alone.
    Junction,
    Station,
    Intersection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    /// Road length in meters, excluding any intersection cell at `from`.
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntersectionSpec {
    pub id: IntersectionId,
    pub node: NodeId,
    /// Upstream neighbor feeding each arm, indexed by [`Arm`].
    pub inlets: [NodeId; 4],
    /// Downstream neighbor reached through each arm, indexed by [`Arm`].
    pub outlets: [NodeId; 4],
    /// Length of the approach lane in front of the cell that belongs to the
    /// intersection, meters. The inlet node sits at its upstream end.
    pub approach: f64,
    pub geometry: Arc<IntersectionGeometry>,
}

impl IntersectionSpec {
    pub fn inlet_arm(&self, from: NodeId) -> Option<Arm> {
        self.inlets.iter().position(|&n| n == from).map(Arm::from_index)
    }

    pub fn outlet_arm(&self, to: NodeId) -> Option<Arm> {
        self.outlets.iter().position(|&n| n == to).map(Arm::from_index)
    }

    /// The cell path used when arriving from `from` and leaving towards `to`.
    /// Without a known predecessor the vehicle is taken to enter from the arm
    /// opposite its exit.
    pub fn path_for(&self, from: Option<NodeId>, to: NodeId) -> Option<PathId> {
        let out = self.outlet_arm(to)?;
        let inl = match from {
            Some(f) => self.inlet_arm(f)?,
            None => out.opposite(),
        };
        PathId::from_arms(inl, out)
    }
}

/// A customer trip: pick up at `origin`, drop off at `destination`, served by
/// a vehicle dispatched from `station` at `start_time`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TravelRequest {
    pub id: u32,
    pub station: NodeId,
    pub origin: NodeId,
    pub destination: NodeId,
    pub start_time: f64,
}

#[derive(Clone, Debug)]
pub struct RoadGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    stations: Vec<NodeId>,
    intersections: Vec<IntersectionSpec>,
    out_edges: Vec<Vec<EdgeId>>,
    in_edges: Vec<Vec<EdgeId>>,
    lookup: BTreeMap<(NodeId, NodeId), EdgeId>,
    intersection_at: Vec<Option<IntersectionId>>,
    junction_approach: f64,
}

impl RoadGraph {
    /// Builds and validates a graph. Node ids must equal their position;
    /// edge ids are reassigned in input order.
    pub fn new(
        nodes: Vec<Node>,
        mut edges: Vec<Edge>,
        stations: Vec<NodeId>,
        intersections: Vec<IntersectionSpec>,
    ) -> Result<Self, NetError> {
        for (pos, n) in nodes.iter().enumerate() {
            if n.id.index() != pos {
                return Err(NetError::NodeOrder { pos, found: n.id });
            }
        }
        let n = nodes.len();
        let mut out_edges = vec![Vec::new(); n];
        let mut in_edges = vec![Vec::new(); n];
        let mut lookup = BTreeMap::new();
        for (i, e) in edges.iter_mut().enumerate() {
            e.id = EdgeId(i as u32);
            if e.from.index() >= n || e.to.index() >= n {
                return Err(NetError::DanglingEdge(e.from, e.to));
            }
            if e.from == e.to {
                return Err(NetError::SelfLoop(e.from));
            }
            if !(e.length.is_finite() && e.length > 0.0) {
                return Err(NetError::BadLength(e.from, e.to, e.length));
            }
            if lookup.insert((e.from, e.to), e.id).is_some() {
                return Err(NetError::DuplicateEdge(e.from, e.to));
            }
            out_edges[e.from.index()].push(e.id);
            in_edges[e.to.index()].push(e.id);
        }
        for &s in &stations {
            if s.index() >= n {
                return Err(NetError::UnknownNode(s));
            }
            if out_edges[s.index()].is_empty() || in_edges[s.index()].is_empty() {
                return Err(NetError::IsolatedStation(s));
            }
        }
        let mut intersection_at = vec![None; n];
        for (i, spec) in intersections.iter().enumerate() {
            let bad = |msg: String| NetError::BadIntersection(spec.id, msg);
            if spec.id.index() != i {
                return Err(bad(format!("id out of order at position {i}")));
            }
            if spec.node.index() >= n {
                return Err(NetError::UnknownNode(spec.node));
            }
            if spec.geometry.paths.len() != 12 {
                return Err(bad(format!("expected 12 paths, found {}", spec.geometry.paths.len())));
            }
            for (k, p) in spec.geometry.paths.iter().enumerate() {
                if p.id.index() != k || PathId::from_arms(p.inlet, p.outlet) != Some(p.id) {
                    return Err(bad(format!("path {k} has inconsistent arms")));
                }
            }
            for c in &spec.geometry.conflicts {
                let la = spec.geometry.path(c.path_a).length;
                let lb = spec.geometry.path(c.path_b).length;
                if !(c.pos_a > 0.0 && c.pos_a < la && c.pos_b > 0.0 && c.pos_b < lb) {
                    return Err(bad(format!("conflict {} not strictly inside its paths", c.id)));
                }
            }
            if !(spec.approach.is_finite() && spec.approach >= 0.0) {
                return Err(bad(format!("invalid approach length {}", spec.approach)));
            }
            for arm in 0..4 {
                let (inl, outl) = (spec.inlets[arm], spec.outlets[arm]);
                match lookup.get(&(inl, spec.node)) {
                    None => return Err(bad(format!("no edge from inlet {inl}"))),
                    Some(e) if edges[e.index()].length <= spec.approach => {
                        return Err(bad(format!("road from {inl} is not longer than the approach lane")));
                    }
                    Some(_) => {}
                }
                if !lookup.contains_key(&(spec.node, outl)) {
                    return Err(bad(format!("no edge to outlet {outl}")));
                }
            }
            let mut ins = spec.inlets;
            ins.sort();
            let mut outs = spec.outlets;
            outs.sort();
            if ins.windows(2).any(|w| w[0] == w[1]) || outs.windows(2).any(|w| w[0] == w[1]) {
                return Err(bad("arms must lead to distinct nodes".into()));
            }
            if in_edges[spec.node.index()].len() != 4 || out_edges[spec.node.index()].len() != 4 {
                return Err(bad("intersection node must have exactly four roads each way".into()));
            }
            if intersection_at[spec.node.index()].replace(spec.id).is_some() {
                return Err(bad("node hosts two intersections".into()));
            }
        }
        Ok(RoadGraph {
            nodes,
            edges,
            stations,
            intersections,
            out_edges,
            in_edges,
            lookup,
            intersection_at,
            junction_approach: 0.0,
        })
    }

    /// Sets the merge lane length ahead of every plain junction. Each road
    /// into a junction must be longer than it.
    pub fn with_junction_approach(mut self, approach: f64) -> Result<Self, NetError> {
        if !(approach.is_finite() && approach >= 0.0) {
            return Err(NetError::BadApproach(approach));
        }
        for e in &self.edges {
            if self.nodes[e.to.index()].kind == NodeKind::Junction && e.length <= approach {
                return Err(NetError::ShortApproachRoad(e.from, e.to, e.length));
            }
        }
        self.junction_approach = approach;
        Ok(self)
    }

    pub fn junction_approach(&self) -> f64 {
        self.junction_approach
    }

    /// Length of the lane ahead of `v` in which vehicles bound for different
    /// roads out of `v` are coordinated. Zero at stations.
    pub fn approach_at(&self, v: NodeId) -> f64 {
        match self.nodes[v.index()].kind {
            NodeKind::Station => 0.0,
            NodeKind::Junction => self.junction_approach,
            NodeKind::Intersection => self.intersection_at(v).map_or(0.0, |s| s.approach),
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn stations(&self) -> &[NodeId] {
        &self.stations
    }

    pub fn intersections(&self) -> &[IntersectionSpec] {
        &self.intersections
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id.index()]
    }

    pub fn intersection(&self, id: IntersectionId) -> &IntersectionSpec {
        &self.intersections[id.index()]
    }

    pub fn contains(&self, v: NodeId) -> bool {
        v.index() < self.nodes.len()
    }

    pub fn is_station(&self, v: NodeId) -> bool {
        self.stations.contains(&v)
    }

    pub fn intersection_at(&self, v: NodeId) -> Option<&IntersectionSpec> {
        self.intersection_at.get(v.index()).copied().flatten().map(|i| &self.intersections[i.index()])
    }

    pub fn edge_between(&self, from: NodeId, to: NodeId) -> Option<EdgeId> {
        self.lookup.get(&(from, to)).copied()
    }

    pub fn out_edges(&self, v: NodeId) -> &[EdgeId] {
        &self.out_edges[v.index()]
    }

    pub fn in_edges(&self, v: NodeId) -> &[EdgeId] {
        &self.in_edges[v.index()]
    }

    /// Successors of `v`.
    pub fn neighbors_out(&self, v: NodeId) -> Result<Vec<NodeId>, NetError> {
        if !self.contains(v) {
            return Err(NetError::UnknownNode(v));
        }
        Ok(self.out_edges[v.index()].iter().map(|&e| self.edges[e.index()].to).collect())
    }

    /// Predecessors of `v`.
    pub fn neighbors_in(&self, v: NodeId) -> Result<Vec<NodeId>, NetError> {
        if !self.contains(v) {
            return Err(NetError::UnknownNode(v));
        }
        Ok(self.in_edges[v.index()].iter().map(|&e| self.edges[e.index()].from).collect())
    }

    fn sweep(&self, start: NodeId, forward: bool) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([start]);
        seen[start.index()] = true;
        while let Some(v) = queue.pop_front() {
            let adj = if forward { &self.out_edges[v.index()] } else { &self.in_edges[v.index()] };
            for &e in adj {
                let edge = &self.edges[e.index()];
                let w = if forward { edge.to } else { edge.from };
                if !seen[w.index()] {
                    seen[w.index()] = true;
                    queue.push_back(w);
                }
            }
        }
        seen
    }

    /// Every station reaches every non-station node and can be reached back.
    pub fn check_station_reachability(&self) -> Result<(), NetError> {
        for &s in &self.stations {
            let fwd = self.sweep(s, true);
            let back = self.sweep(s, false);
            for node in &self.nodes {
                if node.kind != NodeKind::Station && !(fwd[node.id.index()] && back[node.id.index()]) {
                    return Err(NetError::Unreachable(node.id));
                }
            }
        }
        Ok(())
    }

    /// Static shortest road distances from `src` (ignoring cell paths).
    pub fn distances_from(&self, src: NodeId) -> Vec<f64> {
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;
        let mut dist = vec![f64::INFINITY; self.nodes.len()];
        let mut heap = BinaryHeap::new();
        dist[src.index()] = 0.0;
        heap.push(Reverse((OrdF64(0.0), src)));
        while let Some(Reverse((OrdF64(d), v))) = heap.pop() {
            if d > dist[v.index()] {
                continue;
            }
            for &e in &self.out_edges[v.index()] {
                let edge = &self.edges[e.index()];
                let nd = d + edge.length;
                if nd < dist[edge.to.index()] {
                    dist[edge.to.index()] = nd;
                    heap.push(Reverse((OrdF64(nd), edge.to)));
                }
            }
        }
        dist
    }

    pub fn validate_request(&self, r: &TravelRequest) -> Result<(), NetError> {
        let bad = |m: &str| NetError::BadRequest(r.id, m.to_string());
        if !self.is_station(r.station) {
            return Err(bad("assigned station is not a station node"));
        }
        if !self.contains(r.origin) || !self.contains(r.destination) {
            return Err(bad("origin or destination is not a graph node"));
        }
        if r.origin == r.destination {
            return Err(bad("origin equals destination"));
        }
        if !(r.start_time.is_finite() && r.start_time >= 0.0) {
            return Err(bad("start time must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Total order wrapper for heap keys; inputs are never NaN.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct OrdF64(pub f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(i: u32, kind: NodeKind) -> Node {
        Node { id: NodeId(i), kind, x: i as f64, y: 0.0 }
    }

    fn edge(a: u32, b: u32) -> Edge {
        Edge { id: EdgeId(0), from: NodeId(a), to: NodeId(b), length: 10.0 }
    }

    #[test]
    fn rejects_malformed_graphs() {
        let nodes = vec![node(0, NodeKind::Junction), node(1, NodeKind::Junction)];
        assert!(matches!(
            RoadGraph::new(nodes.clone(), vec![edge(0, 0)], vec![], vec![]),
            Err(NetError::SelfLoop(_))
        ));
        assert!(matches!(
            RoadGraph::new(nodes.clone(), vec![edge(0, 1), edge(0, 1)], vec![], vec![]),
            Err(NetError::DuplicateEdge(..))
        ));
        assert!(matches!(
            RoadGraph::new(nodes.clone(), vec![edge(0, 5)], vec![], vec![]),
            Err(NetError::DanglingEdge(..))
        ));
        assert!(matches!(
            RoadGraph::new(nodes, vec![edge(0, 1)], vec![NodeId(0)], vec![]),
            Err(NetError::IsolatedStation(_))
        ));
    }

    #[test]
    fn neighbor_sets() {
        let nodes = vec![node(0, NodeKind::Junction), node(1, NodeKind::Junction), node(2, NodeKind::Junction)];
        let g = RoadGraph::new(nodes, vec![edge(0, 1), edge(1, 0)], vec![], vec![]).unwrap();
        assert!(g.neighbors_out(NodeId(2)).unwrap().is_empty());
        assert!(g.neighbors_in(NodeId(2)).unwrap().is_empty());
        assert_eq!(g.neighbors_out(NodeId(0)).unwrap(), vec![NodeId(1)]);
        assert_eq!(g.neighbors_in(NodeId(0)).unwrap(), vec![NodeId(1)]);
        assert!(matches!(g.neighbors_out(NodeId(9)), Err(NetError::UnknownNode(_))));
    }
}
