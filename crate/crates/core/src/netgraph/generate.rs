//! Seeded grid scenarios.
//!
//! The layout is a `(rows + 2) x (cols + 2)` lattice. Its interior holds the
//! intersections; the outer ring is plain road nodes (bends and T-junctions)
//! so that every intersection has four arms. Stations hang off side ring
//! nodes, spread evenly around the perimeter. Optionally some roads are split
//! by a midpoint node, which is how the paper-scale preset reaches its node
//! and edge counts.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_intersection_geometry, Arm, Edge, EdgeId, IntersectionId, IntersectionSpec, NetError, Node, NodeId,
    NodeKind, RoadGraph, Scenario, TravelRequest,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    pub stations: usize,
    /// Number of roads split in two by a midpoint node.
    pub subdivisions: usize,
    pub road_length: f64,
    pub cell_side: f64,
    pub lane_width: f64,
    /// Lane ahead of every intersection and plain junction within which
    /// vehicles are coordinated before they merge or cross.
    pub approach: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            rows: 3,
            cols: 3,
            stations: 2,
            subdivisions: 0,
            road_length: 100.0,
            cell_side: 30.0,
            lane_width: 3.5,
            approach: 40.0,
        }
    }
}

impl GridConfig {
    /// 70 nodes, 198 directed edges, 20 intersections, 4 stations.
    pub fn paper() -> Self {
        GridConfig { rows: 4, cols: 5, stations: 4, subdivisions: 24, ..GridConfig::default() }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::BadGrid(m));
        if self.rows < 2 || self.cols < 2 {
            return bad(format!("need at least 2x2 intersections, got {}x{}", self.rows, self.cols));
        }
        let sides = 2 * (self.rows + self.cols);
        if self.stations == 0 || self.stations > sides {
            return bad(format!("stations must be in 1..={sides}"));
        }
        let links = self.link_count();
        if self.subdivisions > links {
            return bad(format!("at most {links} roads can be subdivided"));
        }
        if !(self.road_length.is_finite() && self.road_length > 0.0) {
            return bad("road_length must be positive".into());
        }
        let shortest = if self.subdivisions > 0 { 0.5 * self.road_length } else { self.road_length };
        if !(self.approach >= 0.0 && self.approach < shortest) {
            return bad(format!("approach must be in [0, {shortest}) for this grid"));
        }
        if !(self.lane_width > 0.0 && self.cell_side > 2.0 * self.lane_width && self.cell_side.is_finite()) {
            return bad("need lane_width > 0 and cell_side > 2 * lane_width".into());
        }
        Ok(())
    }

    fn link_count(&self) -> usize {
        let (h, w) = (self.rows + 2, self.cols + 2);
        h * (w - 1) + w * (h - 1) + self.stations
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemandConfig {
    pub requests: usize,
    /// Start times are uniform on `[0, horizon]` seconds.
    pub horizon: f64,
    pub seed: u64,
}

impl Default for DemandConfig {
    fn default() -> Self {
        DemandConfig { requests: 1000, horizon: 3600.0, seed: 1 }
    }
}

/// Builds the road graph for `cfg`.
pub fn build_grid(cfg: &GridConfig) -> Result<RoadGraph, NetError> {
    cfg.validate()?;
    let (h, w) = (cfg.rows + 2, cfg.cols + 2);
    let spacing = cfg.road_length + cfg.cell_side;
    let lattice = |r: usize, c: usize| r * w + c;
    let is_interior = |r: usize, c: usize| r >= 1 && r <= cfg.rows && c >= 1 && c <= cfg.cols;

    let mut nodes: Vec<Node> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let kind = if is_interior(r, c) { NodeKind::Intersection } else { NodeKind::Junction };
            // Row 0 is the northern edge.
            nodes.push(Node { id: NodeId(nodes.len() as u32), kind, x: c as f64 * spacing, y: -(r as f64) * spacing });
        }
    }

    // Undirected links in canonical order: horizontal, vertical, stations.
    let mut links: Vec<(usize, usize)> = Vec::new();
    for r in 0..h {
        for c in 0..w - 1 {
            links.push((lattice(r, c), lattice(r, c + 1)));
        }
    }
    for r in 0..h - 1 {
        for c in 0..w {
            links.push((lattice(r, c), lattice(r + 1, c)));
        }
    }

    // Side ring nodes clockwise from the north-west, corners excluded.
    let mut perimeter = Vec::new();
    perimeter.extend((1..=cfg.cols).map(|c| (0, c, Arm::North)));
    perimeter.extend((1..=cfg.rows).map(|r| (r, w - 1, Arm::East)));
    perimeter.extend((1..=cfg.cols).rev().map(|c| (h - 1, c, Arm::South)));
    perimeter.extend((1..=cfg.rows).rev().map(|r| (r, 0, Arm::West)));
    let mut stations = Vec::with_capacity(cfg.stations);
    for i in 0..cfg.stations {
        let k = ((2 * i + 1) * perimeter.len()) / (2 * cfg.stations);
        let (r, c, arm) = perimeter[k];
        let host = lattice(r, c);
        let d = arm.direction();
        let id = nodes.len();
        nodes.push(Node {
            id: NodeId(id as u32),
            kind: NodeKind::Station,
            x: nodes[host].x + d[0] * cfg.road_length,
            y: nodes[host].y + d[1] * cfg.road_length,
        });
        stations.push(NodeId(id as u32));
        links.push((host, id));
    }

    // Split selected links; `mid[l]` is the midpoint of link `l`, if any.
    let n_links = links.len();
    let mut mid = vec![None; n_links];
    for i in 0..cfg.subdivisions {
        let l = i * n_links / cfg.subdivisions;
        let (a, b) = links[l];
        let id = nodes.len();
        nodes.push(Node {
            id: NodeId(id as u32),
            kind: NodeKind::Junction,
            x: 0.5 * (nodes[a].x + nodes[b].x),
            y: 0.5 * (nodes[a].y + nodes[b].y),
        });
        mid[l] = Some(id);
    }

    let mut edges = Vec::new();
    let mut push_pair = |a: usize, b: usize, len: f64| {
        for (u, v) in [(a, b), (b, a)] {
            edges.push(Edge { id: EdgeId(0), from: NodeId(u as u32), to: NodeId(v as u32), length: len });
        }
    };
    for (l, &(a, b)) in links.iter().enumerate() {
        match mid[l] {
            None => push_pair(a, b, cfg.road_length),
            Some(m) => {
                push_pair(a, m, 0.5 * cfg.road_length);
                push_pair(m, b, 0.5 * cfg.road_length);
            }
        }
    }

    // Neighbor of lattice node `from` on the link towards lattice node `to`.
    let link_index = |a: usize, b: usize| links.iter().position(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a));
    let geometry = Arc::new(build_intersection_geometry(cfg.lane_width, cfg.cell_side));
    let mut intersections = Vec::new();
    for r in 1..=cfg.rows {
        for c in 1..=cfg.cols {
            let me = lattice(r, c);
            let mut arms = [NodeId(0); 4];
            for arm in Arm::ALL {
                let other = match arm {
                    Arm::North => lattice(r - 1, c),
                    Arm::East => lattice(r, c + 1),
                    Arm::South => lattice(r + 1, c),
                    Arm::West => lattice(r, c - 1),
                };
                let l = link_index(me, other).expect("lattice neighbors are linked");
                arms[arm.index()] = NodeId(mid[l].unwrap_or(other) as u32);
            }
            intersections.push(IntersectionSpec {
                id: IntersectionId(intersections.len() as u32),
                node: NodeId(me as u32),
                inlets: arms,
                outlets: arms,
                approach: cfg.approach,
                geometry: Arc::clone(&geometry),
            });
        }
    }

    let g = RoadGraph::new(nodes, edges, stations, intersections)?.with_junction_approach(cfg.approach)?;
    g.check_station_reachability()?;
    Ok(g)
}

/// Draws `demand.requests` requests over the non-station nodes of `g`, sorted
/// by start time and numbered in that order. Each is served by the station
/// with the shortest static distance to its origin (ties to the lower id).
pub fn generate_requests(g: &RoadGraph, demand: &DemandConfig) -> Result<Vec<TravelRequest>, NetError> {
    if !(demand.horizon.is_finite() && demand.horizon >= 0.0) {
        return Err(NetError::BadGrid("horizon must be finite and non-negative".into()));
    }
    let candidates: Vec<NodeId> =
        g.nodes().iter().filter(|n| n.kind != NodeKind::Station).map(|n| n.id).collect();
    if demand.requests > 0 && (candidates.len() < 2 || g.stations().is_empty()) {
        return Err(NetError::BadGrid("need two non-station nodes and a station to draw requests".into()));
    }
    let station_dist: Vec<Vec<f64>> = g.stations().iter().map(|&s| g.distances_from(s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(demand.seed);
    let mut drawn = Vec::with_capacity(demand.requests);
    for _ in 0..demand.requests {
        let start = rng.gen_range(0.0..=demand.horizon);
        let o = candidates[rng.gen_range(0..candidates.len())];
        let d = loop {
            let d = candidates[rng.gen_range(0..candidates.len())];
            if d != o {
                break d;
            }
        };
        drawn.push((start, o, d));
    }
    drawn.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(drawn
        .into_iter()
        .enumerate()
        .map(|(i, (start_time, origin, destination))| {
            let mut best = 0;
            for k in 1..g.stations().len() {
                if station_dist[k][origin.index()] < station_dist[best][origin.index()] {
                    best = k;
                }
            }
            TravelRequest { id: i as u32, station: g.stations()[best], origin, destination, start_time }
        })
        .collect())
}

pub fn generate_scenario(grid: &GridConfig, demand: &DemandConfig) -> Result<Scenario, NetError> {
    let graph = build_grid(grid)?;
    let requests = generate_requests(&graph, demand)?;
    Scenario::new(graph, requests)
}
