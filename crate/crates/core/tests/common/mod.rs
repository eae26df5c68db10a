//! Random small networks with committed background traffic.

#![allow(dead_code)]

use std::sync::Arc;

use cavroute::coord::{Ledgers, SafetyParams};
use cavroute::motion::MotionLimits;
use cavroute::netgraph::{
    build_intersection_geometry, Edge, EdgeId, IntersectionId, IntersectionSpec, Node, NodeId, NodeKind, RoadGraph,
};
use cavroute::route::{commit_trip, shortest_time_route, Pricing, StartState, TripKind};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const APPROACH: f64 = 40.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A strongly connected graph with at most `max_nodes` nodes, roads of
/// 60 to 150 m in both directions, one or two stations and, when there is
/// room, a four-arm intersection.
pub fn random_graph(rng: &mut ChaCha8Rng, max_nodes: usize) -> RoadGraph {
    assert!(max_nodes >= 3);
    let with_intersection = max_nodes >= 6 && rng.gen_bool(0.6);
    let n = rng.gen_range(if with_intersection { 6 } else { 3 }..=max_nodes);
    let mut kinds = vec![NodeKind::Junction; n];
    let mut links: Vec<(usize, usize)> = Vec::new();
    let mut intersections = Vec::new();
    // Nodes other than the intersection, which only links to its arms.
    let mut free: Vec<usize> = (0..n).collect();
    if with_intersection {
        kinds[0] = NodeKind::Intersection;
        free.remove(0);
        for arm in 1..=4 {
            links.push((0, arm));
        }
        let arms = [NodeId(1), NodeId(2), NodeId(3), NodeId(4)];
        intersections.push((arms, APPROACH));
    }
    // Random spanning tree over the free nodes, then a few chords.
    let mut order = free.clone();
    order.shuffle(rng);
    for i in 1..order.len() {
        let j = rng.gen_range(0..i);
        links.push((order[i], order[j]));
    }
    for _ in 0..rng.gen_range(0..=free.len()) {
        let a = *free.choose(rng).unwrap();
        let b = *free.choose(rng).unwrap();
        if a != b && !links.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a)) {
            links.push((a, b));
        }
    }
    let count = rng.gen_range(1..=2);
    let stations: Vec<NodeId> = free.choose_multiple(rng, count).map(|&i| NodeId(i as u32)).collect();
    for s in &stations {
        kinds[s.index()] = NodeKind::Station;
    }
    let nodes: Vec<Node> = (0..n)
        .map(|i| Node { id: NodeId(i as u32), kind: kinds[i], x: 200.0 * i as f64, y: rng.gen_range(0.0..500.0) })
        .collect();
    let mut edges = Vec::new();
    for &(a, b) in &links {
        let length = rng.gen_range(60.0..150.0);
        for (f, t) in [(a, b), (b, a)] {
            edges.push(Edge { id: EdgeId(0), from: NodeId(f as u32), to: NodeId(t as u32), length });
        }
    }
    let geometry = Arc::new(build_intersection_geometry(3.5, 30.0));
    let specs = intersections
        .into_iter()
        .map(|(arms, approach)| IntersectionSpec {
            id: IntersectionId(0),
            node: NodeId(0),
            inlets: arms,
            outlets: arms,
            approach,
            geometry: Arc::clone(&geometry),
        })
        .collect();
    RoadGraph::new(nodes, edges, stations, specs).unwrap().with_junction_approach(APPROACH).unwrap()
}

/// Routes `vehicles` random trips with live costs and commits every trip
/// that found feasible trajectories. Returns how many were committed.
pub fn add_traffic(
    g: &RoadGraph,
    ledgers: &mut Ledgers,
    rng: &mut ChaCha8Rng,
    vehicles: u32,
    first_id: u32,
    lim: &MotionLimits,
    sp: &SafetyParams,
) -> usize {
    let mut committed = 0;
    for k in 0..vehicles {
        let start = random_start(g, rng, first_id + k, 30.0, lim);
        let target = NodeId(rng.gen_range(0..g.node_count()) as u32);
        let trip = shortest_time_route(g, ledgers, &start, target, TripKind::Service, lim, sp, Pricing::Live).unwrap();
        if !trip.penalized {
            commit_trip(ledgers, &start, &trip, lim, sp).unwrap();
            committed += 1;
        }
    }
    committed
}

/// A vehicle appearing at a random station or junction at a random time in
/// `[0, horizon]`. Off-station starts carry a random speed. Intersections are
/// skipped: a vehicle appearing there would already be on the approach lane
/// of another road.
pub fn random_start(g: &RoadGraph, rng: &mut ChaCha8Rng, vehicle: u32, horizon: f64, lim: &MotionLimits) -> StartState {
    let entries: Vec<NodeId> =
        g.nodes().iter().filter(|n| n.kind != NodeKind::Intersection).map(|n| n.id).collect();
    let node = entries[rng.gen_range(0..entries.len())];
    let time = rng.gen_range(0.0..horizon);
    if g.is_station(node) {
        StartState::at_station(vehicle, node, time, lim)
    } else {
        let speed = rng.gen_range(lim.v_min..lim.v_max);
        StartState { vehicle, node, time, speed, pred: None, last: None }
    }
}
