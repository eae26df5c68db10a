//! Scenario files: a road graph plus its travel requests, as JSON.
//!
//! Intersection geometry is stored for inspection but rebuilt from the cell
//! dimensions on load; a stored table that disagrees with the rebuilt one is
//! rejected.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    build_intersection_geometry, ConflictPoint, Edge, EdgeId, IntersectionId, IntersectionSpec, NetError, Node,
    NodeId, PathId, RoadGraph, TravelRequest, Turn,
};

const GEOMETRY_TOL: f64 = 1e-6;

/// A validated graph together with requests that reference it.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub graph: RoadGraph,
    pub requests: Vec<TravelRequest>,
}

impl Scenario {
    pub fn new(graph: RoadGraph, requests: Vec<TravelRequest>) -> Result<Self, NetError> {
        for (i, r) in requests.iter().enumerate() {
            if r.id as usize != i {
                return Err(NetError::BadRequest(r.id, format!("expected id {i}")));
            }
            graph.validate_request(r)?;
        }
        Ok(Scenario { graph, requests })
    }

    pub fn to_file(&self) -> ScenarioFile {
        let g = &self.graph;
        ScenarioFile {
            nodes: g.nodes().to_vec(),
            edges: g.edges().iter().map(|e| EdgeRecord { from: e.from, to: e.to, length: e.length }).collect(),
            stations: g.stations().to_vec(),
            intersections: g
                .intersections()
                .iter()
                .map(|s| IntersectionRecord {
                    id: s.id,
                    node: s.node,
                    inlets: s.inlets,
                    outlets: s.outlets,
                    approach: s.approach,
                    lane_width: s.geometry.lane_width,
                    cell_side: s.geometry.cell_side,
                    paths: s
                        .geometry
                        .paths
                        .iter()
                        .map(|p| PathRecord { id: p.id, turn: p.turn, length: p.length })
                        .collect(),
                    conflicts: s.geometry.conflicts.clone(),
                })
                .collect(),
            junction_approach: g.junction_approach(),
            requests: self.requests.clone(),
        }
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self, NetError> {
        let mut cache: BTreeMap<(u64, u64), Arc<_>> = BTreeMap::new();
        let mut intersections = Vec::with_capacity(file.intersections.len());
        for rec in file.intersections {
            let bad = |m: &str| NetError::BadIntersection(rec.id, m.to_string());
            if !(rec.lane_width > 0.0 && rec.cell_side > 2.0 * rec.lane_width && rec.cell_side.is_finite()) {
                return Err(bad("invalid cell dimensions"));
            }
            let geometry = cache
                .entry((rec.lane_width.to_bits(), rec.cell_side.to_bits()))
                .or_insert_with(|| Arc::new(build_intersection_geometry(rec.lane_width, rec.cell_side)))
                .clone();
            if !rec.paths.is_empty() {
                let same = rec.paths.len() == geometry.paths.len()
                    && rec.paths.iter().zip(&geometry.paths).all(|(a, b)| {
                        a.id == b.id && a.turn == b.turn && (a.length - b.length).abs() < GEOMETRY_TOL
                    });
                if !same {
                    return Err(bad("stored paths disagree with the cell geometry"));
                }
            }
            if !rec.conflicts.is_empty() {
                let same = rec.conflicts.len() == geometry.conflicts.len()
                    && rec.conflicts.iter().zip(&geometry.conflicts).all(|(a, b)| {
                        a.path_a == b.path_a
                            && a.path_b == b.path_b
                            && (a.pos_a - b.pos_a).abs() < GEOMETRY_TOL
                            && (a.pos_b - b.pos_b).abs() < GEOMETRY_TOL
                    });
                if !same {
                    return Err(bad("stored conflicts disagree with the cell geometry"));
                }
            }
            intersections.push(IntersectionSpec {
                id: rec.id,
                node: rec.node,
                inlets: rec.inlets,
                outlets: rec.outlets,
                approach: rec.approach,
                geometry,
            });
        }
        let edges = file
            .edges
            .iter()
            .map(|e| Edge { id: EdgeId(0), from: e.from, to: e.to, length: e.length })
            .collect();
        let graph =
            RoadGraph::new(file.nodes, edges, file.stations, intersections)?.with_junction_approach(file.junction_approach)?;
        Scenario::new(graph, file.requests)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("scenario serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioLoadError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        Ok(Scenario::from_file(file)?)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioLoadError {
    #[error("malformed scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub nodes: Vec<Node>,
    pub edges: Vec<EdgeRecord>,
    pub stations: Vec<NodeId>,
    pub intersections: Vec<IntersectionRecord>,
    /// Merge lane ahead of plain junctions, meters.
    #[serde(default)]
    pub junction_approach: f64,
    #[serde(default)]
    pub requests: Vec<TravelRequest>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub from: NodeId,
    pub to: NodeId,
    pub length: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntersectionRecord {
    pub id: IntersectionId,
    pub node: NodeId,
    pub inlets: [NodeId; 4],
    pub outlets: [NodeId; 4],
    pub approach: f64,
    pub lane_width: f64,
    pub cell_side: f64,
    #[serde(default)]
    pub paths: Vec<PathRecord>,
    #[serde(default)]
    pub conflicts: Vec<ConflictPoint>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathRecord {
    pub id: PathId,
    pub turn: Turn,
    pub length: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{generate_scenario, DemandConfig, GridConfig};

    fn sample() -> Scenario {
        generate_scenario(&GridConfig::default(), &DemandConfig { requests: 20, horizon: 300.0, seed: 5 }).unwrap()
    }

    #[test]
    fn json_round_trip_is_exact() {
        let s = sample();
        let text = s.to_json();
        let back = Scenario::from_json(&text).unwrap();
        assert_eq!(back.requests, s.requests);
        assert_eq!(back.graph.nodes(), s.graph.nodes());
        assert_eq!(back.graph.edges(), s.graph.edges());
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn top_level_keys() {
        let v: serde_json::Value = serde_json::from_str(&sample().to_json()).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        for k in ["nodes", "edges", "stations", "intersections", "requests"] {
            assert!(keys.iter().any(|x| x == k), "missing {k}");
        }
    }

    #[test]
    fn tampered_geometry_rejected() {
        let mut f = sample().to_file();
        f.intersections[0].conflicts[0].pos_a += 0.5;
        assert!(matches!(Scenario::from_file(f), Err(NetError::BadIntersection(..))));
    }

    #[test]
    fn invalid_request_rejected() {
        let mut f = sample().to_file();
        f.requests[0].destination = f.requests[0].origin;
        assert!(matches!(Scenario::from_file(f), Err(NetError::BadRequest(..))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn generated_scenarios_round_trip(
                rows in 2usize..4, cols in 2usize..4, stations in 1usize..4, requests in 0usize..30, seed in any::<u64>(),
            ) {
                let grid = GridConfig { rows, cols, stations, ..GridConfig::default() };
                let s = generate_scenario(&grid, &DemandConfig { requests, horizon: 600.0, seed }).unwrap();
                let text = s.to_json();
                let back = Scenario::from_json(&text).unwrap();
                prop_assert_eq!(&back.requests, &s.requests);
                prop_assert_eq!(back.to_json(), text);
            }
        }
    }
}
