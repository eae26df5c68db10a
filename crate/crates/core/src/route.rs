//! Shortest-time routing over live edge costs.
//!
//! Each edge is priced by asking the ledgers for the minimum exit time of the
//! vehicle entering it. The search is label-setting and keyed on the node
//! alone; entry speed, predecessor and the piece just driven ride along as
//! payload because the cubic cost of the next edge depends on them.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::Serialize;
use thiserror::Error;

use crate::coord::{CoordError, Ledgers, PrevPiece, Probe, Segment, TraversalId, Traversal};
use crate::motion::{CubicTrajectory, MotionLimits};
use crate::netgraph::{EdgeId, NodeId, OrdF64, RoadGraph, TravelRequest};
use crate::coord::SafetyParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RouteError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {to} cannot be reached from {from}")]
    Unreachable { from: NodeId, to: NodeId },
    #[error(transparent)]
    Coord(#[from] CoordError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TripKind {
    Pickup,
    Service,
    Return,
}

impl TripKind {
    pub const ALL: [TripKind; 3] = [TripKind::Pickup, TripKind::Service, TripKind::Return];
}

/// Where and how a vehicle stands when a trip begins.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StartState {
    pub vehicle: u32,
    pub node: NodeId,
    pub time: f64,
    pub speed: f64,
    pub pred: Option<NodeId>,
    /// The committed piece the vehicle is finishing, if it is moving.
    pub last: Option<PrevPiece>,
}

impl StartState {
    /// A vehicle leaving a station from near rest.
    pub fn at_station(vehicle: u32, node: NodeId, time: f64, lim: &MotionLimits) -> Self {
        StartState { vehicle, node, time, speed: lim.v_min, pred: None, last: None }
    }
}

/// Longest a vehicle waits in a station for its first road to clear, seconds.
pub const MAX_STATION_HOLD: f64 = 600.0;

/// The result of pricing one edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeCost {
    pub segment: Segment,
    /// From arrival at the tail to exit, station hold included.
    pub duration: f64,
    pub exit_speed: f64,
    /// `None` when no feasible exit time exists and the penalty was charged.
    pub traj: Option<CubicTrajectory>,
}

/// How edges are priced during a search.
#[derive(Clone, Copy)]
pub enum Pricing<'a> {
    /// At the time the vehicle actually reaches each edge.
    Live,
    /// Every edge at one frozen instant, seeing only committed traversals
    /// accepted by the filter (all when `None`).
    Frozen { at: f64, visible: Option<&'a dyn Fn(&Traversal) -> bool> },
}

/// Prices `edge` for a vehicle arriving at its tail at `t_arrive` with
/// `v_entry`, coming from `pred`. `None` if the move is a U-turn inside an
/// intersection.
#[allow(clippy::too_many_arguments)]
pub fn edge_travel_time(
    g: &RoadGraph,
    ledgers: &Ledgers,
    vehicle: u32,
    edge: EdgeId,
    t_arrive: f64,
    v_entry: f64,
    pred: Option<NodeId>,
    prev: Option<PrevPiece>,
    lim: &MotionLimits,
    sp: &SafetyParams,
) -> Option<EdgeCost> {
    price(g, ledgers, vehicle, edge, t_arrive, v_entry, pred, prev, lim, sp, None)
}

#[allow(clippy::too_many_arguments)]
fn price(
    g: &RoadGraph,
    ledgers: &Ledgers,
    vehicle: u32,
    edge: EdgeId,
    t_arrive: f64,
    v_entry: f64,
    pred: Option<NodeId>,
    prev: Option<PrevPiece>,
    lim: &MotionLimits,
    sp: &SafetyParams,
    visible: Option<&dyn Fn(&Traversal) -> bool>,
) -> Option<EdgeCost> {
    let segment = Segment::new(g, edge, pred)?;
    // A vehicle at rest in a station may hold its departure until the road
    // admits it; elsewhere it enters when it arrives.
    let holds = if prev.is_none() && g.is_station(g.edge(edge).from) {
        (MAX_STATION_HOLD / sp.dt).floor() as usize
    } else {
        0
    };
    for k in 0..=holds {
        let t0 = t_arrive + k as f64 * sp.dt;
        let probe = Probe { vehicle, segment, t0, v0: v_entry, prev };
        if let Some(traj) = ledgers.min_exit_time_filtered(&probe, lim, sp, visible) {
            return Some(EdgeCost {
                segment,
                duration: traj.tf() - t_arrive,
                exit_speed: traj.exit_speed(),
                traj: Some(traj),
            });
        }
    }
    Some(EdgeCost { segment, duration: sp.penalty, exit_speed: lim.v_min, traj: None })
}

/// One edge of a chosen route.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RouteStep {
    pub edge: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    pub segment: Segment,
    pub t_enter: f64,
    pub t_exit: f64,
    pub traj: Option<CubicTrajectory>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trip {
    pub kind: TripKind,
    pub start: NodeId,
    pub end: NodeId,
    pub start_time: f64,
    pub arrival: f64,
    pub nodes: Vec<NodeId>,
    pub steps: Vec<RouteStep>,
    /// Some edge had no feasible trajectory and was charged the penalty.
    pub penalized: bool,
}

impl Trip {
    pub fn duration(&self) -> f64 {
        self.arrival - self.start_time
    }
}

#[derive(Clone, Copy, Debug)]
struct Label {
    arrival: f64,
    speed: f64,
    pred: Option<NodeId>,
    prev: Option<PrevPiece>,
    penalized: bool,
    via: Option<(EdgeId, f64, f64, Segment, Option<CubicTrajectory>)>,
}

/// Label-setting shortest-time search from `start` to `target`.
#[allow(clippy::too_many_arguments)]
pub fn shortest_time_route(
    g: &RoadGraph,
    ledgers: &Ledgers,
    start: &StartState,
    target: NodeId,
    kind: TripKind,
    lim: &MotionLimits,
    sp: &SafetyParams,
    pricing: Pricing<'_>,
) -> Result<Trip, RouteError> {
    for v in [start.node, target] {
        if !g.contains(v) {
            return Err(RouteError::UnknownNode(v));
        }
    }
    let n = g.node_count();
    let mut labels: Vec<Option<Label>> = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    labels[start.node.index()] = Some(Label {
        arrival: start.time,
        speed: start.speed,
        pred: start.pred,
        prev: start.last,
        penalized: false,
        via: None,
    });
    heap.push(Reverse((OrdF64(start.time), start.node)));
    while let Some(Reverse((OrdF64(t), u))) = heap.pop() {
        if settled[u.index()] {
            continue;
        }
        settled[u.index()] = true;
        if u == target {
            break;
        }
        let lab = labels[u.index()].expect("queued nodes carry labels");
        debug_assert_eq!(lab.arrival, t);
        for &e in g.out_edges(u) {
            let w = g.edge(e).to;
            if settled[w.index()] {
                continue;
            }
            let cost = match pricing {
                Pricing::Live => price(g, ledgers, start.vehicle, e, lab.arrival, lab.speed, lab.pred, lab.prev, lim, sp, None),
                Pricing::Frozen { at, visible } => {
                    price(g, ledgers, start.vehicle, e, at, lab.speed, lab.pred, None, lim, sp, visible)
                }
            };
            let Some(cost) = cost else { continue };
            let arrival = lab.arrival + cost.duration;
            if labels[w.index()].is_some_and(|l| l.arrival <= arrival) {
                continue;
            }
            let prev = match (pricing, cost.traj) {
                (Pricing::Live, Some(traj)) => Some(PrevPiece { id: None, segment: cost.segment, traj }),
                _ => None,
            };
            labels[w.index()] = Some(Label {
                arrival,
                speed: cost.exit_speed,
                pred: Some(u),
                prev,
                penalized: lab.penalized || cost.traj.is_none(),
                via: Some((e, cost.traj.map_or(lab.arrival, |t| t.t0()), arrival, cost.segment, cost.traj)),
            });
            heap.push(Reverse((OrdF64(arrival), w)));
        }
    }
    let Some(end) = labels[target.index()].filter(|_| settled[target.index()]) else {
        return Err(RouteError::Unreachable { from: start.node, to: target });
    };
    let mut steps = Vec::new();
    let mut cur = target;
    while let Some(l) = labels[cur.index()] {
        let Some((edge, t_enter, t_exit, segment, traj)) = l.via else { break };
        let from = g.edge(edge).from;
        steps.push(RouteStep { edge, from, to: cur, segment, t_enter, t_exit, traj });
        cur = from;
        if cur == start.node {
            break;
        }
    }
    steps.reverse();
    let mut nodes = vec![start.node];
    nodes.extend(steps.iter().map(|s| s.to));
    Ok(Trip {
        kind,
        start: start.node,
        end: target,
        start_time: start.time,
        arrival: end.arrival,
        nodes,
        steps,
        penalized: end.penalized,
    })
}

/// Re-prices a fixed node sequence edge by edge at the actual arrival times.
pub fn drive_route(
    g: &RoadGraph,
    ledgers: &Ledgers,
    start: &StartState,
    nodes: &[NodeId],
    kind: TripKind,
    lim: &MotionLimits,
    sp: &SafetyParams,
) -> Result<Trip, RouteError> {
    let mut t = start.time;
    let mut speed = start.speed;
    let mut pred = start.pred;
    let mut prev = start.last;
    let mut penalized = false;
    let mut steps = Vec::with_capacity(nodes.len().saturating_sub(1));
    for pair in nodes.windows(2) {
        let (u, w) = (pair[0], pair[1]);
        let edge = g.edge_between(u, w).ok_or(RouteError::Unreachable { from: u, to: w })?;
        let cost = edge_travel_time(g, ledgers, start.vehicle, edge, t, speed, pred, prev, lim, sp)
            .ok_or(RouteError::Unreachable { from: u, to: w })?;
        let t_enter = cost.traj.map_or(t, |tr| tr.t0());
        steps.push(RouteStep { edge, from: u, to: w, segment: cost.segment, t_enter, t_exit: t + cost.duration, traj: cost.traj });
        penalized |= cost.traj.is_none();
        prev = cost.traj.map(|traj| PrevPiece { id: None, segment: cost.segment, traj });
        t += cost.duration;
        speed = cost.exit_speed;
        pred = Some(u);
    }
    Ok(Trip {
        kind,
        start: start.node,
        end: *nodes.last().unwrap_or(&start.node),
        start_time: start.time,
        arrival: t,
        nodes: nodes.to_vec(),
        steps,
        penalized,
    })
}

/// Commits every step of an unpenalized trip in order and returns the state
/// the vehicle is in at its end.
pub fn commit_trip(
    ledgers: &mut Ledgers,
    start: &StartState,
    trip: &Trip,
    lim: &MotionLimits,
    sp: &SafetyParams,
) -> Result<StartState, RouteError> {
    let mut prev = start.last;
    let mut speed = start.speed;
    let mut pred = start.pred;
    for step in &trip.steps {
        let traj = step.traj.ok_or(CoordError::Mismatch("penalized step cannot be committed"))?;
        let probe = Probe { vehicle: start.vehicle, segment: step.segment, t0: step.t_enter, v0: speed, prev };
        let id: TraversalId = ledgers.commit(&probe, traj, lim, sp)?;
        prev = Some(PrevPiece { id: Some(id), segment: step.segment, traj });
        speed = traj.exit_speed();
        pred = Some(step.from);
    }
    Ok(StartState { vehicle: start.vehicle, node: trip.end, time: trip.arrival, speed, pred, last: prev })
}

/// Per-leg outcome of routing one request.
#[derive(Clone, Debug, PartialEq)]
pub struct RequestOutcome {
    pub request: u32,
    pub trips: Vec<Trip>,
    /// Leg durations in seconds, zero for legs never routed.
    pub leg_times: [f64; 3],
    pub failed: Option<TripKind>,
}

impl RequestOutcome {
    pub fn total(&self) -> f64 {
        self.leg_times.iter().fold(0.0, |a, b| a + b)
    }
}

/// How each leg of a request is routed.
pub trait LegPlanner {
    #[allow(clippy::too_many_arguments)]
    fn plan(
        &self,
        g: &RoadGraph,
        ledgers: &Ledgers,
        start: &StartState,
        target: NodeId,
        kind: TripKind,
        lim: &MotionLimits,
        sp: &SafetyParams,
    ) -> Result<Trip, RouteError>;
}

/// Routes every leg with live costs.
pub struct LivePlanner;

impl LegPlanner for LivePlanner {
    fn plan(
        &self,
        g: &RoadGraph,
        ledgers: &Ledgers,
        start: &StartState,
        target: NodeId,
        kind: TripKind,
        lim: &MotionLimits,
        sp: &SafetyParams,
    ) -> Result<Trip, RouteError> {
        shortest_time_route(g, ledgers, start, target, kind, lim, sp, Pricing::Live)
    }
}

/// Routes the three legs of a request in order with `planner`, committing
/// each leg before the next is planned. A penalized leg commits nothing and
/// ends the request.
pub fn route_request_with(
    planner: &dyn LegPlanner,
    req: &TravelRequest,
    g: &RoadGraph,
    ledgers: &mut Ledgers,
    lim: &MotionLimits,
    sp: &SafetyParams,
    dwell: f64,
) -> Result<RequestOutcome, RouteError> {
    let mut state = StartState::at_station(req.id, req.station, req.start_time, lim);
    let targets = [req.origin, req.destination, req.station];
    let mut out = RequestOutcome { request: req.id, trips: Vec::new(), leg_times: [0.0; 3], failed: None };
    for (k, (&kind, &target)) in TripKind::ALL.iter().zip(&targets).enumerate() {
        let trip = planner.plan(g, ledgers, &state, target, kind, lim, sp)?;
        out.leg_times[k] = trip.duration();
        if trip.penalized {
            out.failed = Some(kind);
            out.trips.push(trip);
            break;
        }
        state = commit_trip(ledgers, &state, &trip, lim, sp)?;
        out.trips.push(trip);
        if dwell > 0.0 {
            // Standing still breaks the motion chain; the vehicle restarts slowly.
            state = StartState { time: state.time + dwell, speed: lim.v_min, last: None, ..state };
            out.leg_times[k] += dwell;
        }
    }
    Ok(out)
}

/// Proposed routing of a whole request: pickup, service and return legs,
/// each a live shortest-time route.
pub fn route_whole_request(
    req: &TravelRequest,
    g: &RoadGraph,
    ledgers: &mut Ledgers,
    lim: &MotionLimits,
    sp: &SafetyParams,
    dwell: f64,
) -> Result<RequestOutcome, RouteError> {
    route_request_with(&LivePlanner, req, g, ledgers, lim, sp, dwell)
}

/// Exhaustive minimum arrival over all simple paths, chaining edge costs
/// exactly as the search does. Exponential; for small test graphs only.
pub fn brute_force_arrival(
    g: &RoadGraph,
    ledgers: &Ledgers,
    start: &StartState,
    target: NodeId,
    lim: &MotionLimits,
    sp: &SafetyParams,
) -> Option<f64> {
    #[allow(clippy::too_many_arguments)]
    fn go(
        g: &RoadGraph,
        ledgers: &Ledgers,
        vehicle: u32,
        at: (NodeId, f64, f64, Option<NodeId>, Option<PrevPiece>),
        target: NodeId,
        on_path: &mut Vec<bool>,
        lim: &MotionLimits,
        sp: &SafetyParams,
        best: &mut Option<f64>,
    ) {
        let (u, t, v, pred, prev) = at;
        if u == target {
            *best = Some(best.map_or(t, |b: f64| b.min(t)));
            return;
        }
        for &e in g.out_edges(u) {
            let w = g.edge(e).to;
            if on_path[w.index()] {
                continue;
            }
            let Some(c) = edge_travel_time(g, ledgers, vehicle, e, t, v, pred, prev, lim, sp) else { continue };
            let next_prev = c.traj.map(|traj| PrevPiece { id: None, segment: c.segment, traj });
            on_path[w.index()] = true;
            go(g, ledgers, vehicle, (w, t + c.duration, c.exit_speed, Some(u), next_prev), target, on_path, lim, sp, best);
            on_path[w.index()] = false;
        }
    }
    let mut on_path = vec![false; g.node_count()];
    on_path[start.node.index()] = true;
    let mut best = None;
    go(
        g,
        ledgers,
        start.vehicle,
        (start.node, start.time, start.speed, start.pred, start.last),
        target,
        &mut on_path,
        lim,
        sp,
        &mut best,
    );
    best
}

/// Backward dynamic program over discretized states. States are (node,
/// predecessor, arrival time bucket of width `time_grid`, speed bucket);
/// each bucket keeps the first representative reached. Reachable states are
/// enumerated forward for `|V| - 1` stages, then costs-to-go are solved
/// backward from `J = 0` at the target. Returns the arrival time.
pub fn backward_dp_oracle(
    g: &RoadGraph,
    ledgers: &Ledgers,
    start: &StartState,
    target: NodeId,
    lim: &MotionLimits,
    sp: &SafetyParams,
    time_grid: f64,
) -> Option<f64> {
    type Key = (NodeId, Option<NodeId>, i64, i64);
    #[derive(Clone, Copy)]
    struct State {
        node: NodeId,
        time: f64,
        speed: f64,
        pred: Option<NodeId>,
        prev: Option<PrevPiece>,
    }
    let key = |s: &State| -> Key {
        (s.node, s.pred, (s.time / time_grid).floor() as i64, (s.speed * 1e6).round() as i64)
    };
    let s0 = State { node: start.node, time: start.time, speed: start.speed, pred: start.pred, prev: start.last };
    let mut states: Vec<State> = vec![s0];
    let mut index: BTreeMap<Key, usize> = BTreeMap::from([(key(&s0), 0)]);
    // transitions[i] = (successor index, stage cost)
    let mut transitions: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
    let mut frontier = vec![0usize];
    for _stage in 0..g.node_count().saturating_sub(1) {
        let mut next_frontier = Vec::new();
        for &i in &frontier {
            let s = states[i];
            if s.node == target {
                continue;
            }
            for &e in g.out_edges(s.node) {
                let Some(c) = edge_travel_time(g, ledgers, start.vehicle, e, s.time, s.speed, s.pred, s.prev, lim, sp)
                else {
                    continue;
                };
                let ns = State {
                    node: g.edge(e).to,
                    time: s.time + c.duration,
                    speed: c.exit_speed,
                    pred: Some(s.node),
                    prev: c.traj.map(|traj| PrevPiece { id: None, segment: c.segment, traj }),
                };
                let k = key(&ns);
                let j = match index.get(&k) {
                    Some(&j) => j,
                    None => {
                        states.push(ns);
                        transitions.push(Vec::new());
                        index.insert(k, states.len() - 1);
                        next_frontier.push(states.len() - 1);
                        states.len() - 1
                    }
                };
                transitions[i].push((j, ns.time - s.time));
            }
        }
        frontier = next_frontier;
        if frontier.is_empty() {
            break;
        }
    }
    // Backward sweep to a fixed point: J(target states) = 0, J(s) = min over
    // successors of (g + J). The state graph is a DAG in time, so ordering by
    // time and sweeping once from the latest state backward suffices.
    let mut order: Vec<usize> = (0..states.len()).collect();
    order.sort_by(|&a, &b| states[b].time.total_cmp(&states[a].time));
    let mut cost_to_go = vec![f64::INFINITY; states.len()];
    for &i in &order {
        if states[i].node == target {
            cost_to_go[i] = 0.0;
            continue;
        }
        for &(j, c) in &transitions[i] {
            cost_to_go[i] = cost_to_go[i].min(c + cost_to_go[j]);
        }
    }
    cost_to_go[0].is_finite().then(|| start.time + cost_to_go[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{build_grid, GridConfig, NodeKind};

    fn grid() -> RoadGraph {
        build_grid(&GridConfig::default()).unwrap()
    }

    fn junction_start(g: &RoadGraph, lim: &MotionLimits) -> StartState {
        StartState::at_station(0, g.stations()[0], 0.0, lim)
    }

    #[test]
    fn zero_length_trip() {
        let g = grid();
        let led = Ledgers::new(&g);
        let lim = MotionLimits::default();
        let s = junction_start(&g, &lim);
        let trip =
            shortest_time_route(&g, &led, &s, s.node, TripKind::Pickup, &lim, &SafetyParams::default(), Pricing::Live)
                .unwrap();
        assert_eq!(trip.arrival, s.time);
        assert!(trip.steps.is_empty());
    }

    #[test]
    fn free_flow_edge_at_v_max() {
        let g = grid();
        let led = Ledgers::new(&g);
        let lim = MotionLimits::default();
        let e = g.edges().iter().find(|e| g.nodes()[e.from.index()].kind == NodeKind::Station).unwrap();
        let c = edge_travel_time(&g, &led, 0, e.id, 0.0, 15.0, None, None, &lim, &SafetyParams::default()).unwrap();
        let len = c.segment.seg_len;
        assert!((c.duration - len / 15.0).abs() < 1e-9);
        assert!((c.exit_speed - 15.0).abs() < 1e-9);
    }

    #[test]
    fn route_chains_with_continuity() {
        let g = grid();
        let led = Ledgers::new(&g);
        let lim = MotionLimits::default();
        let sp = SafetyParams::default();
        let s = junction_start(&g, &lim);
        let target = g.stations()[1];
        let trip = shortest_time_route(&g, &led, &s, target, TripKind::Pickup, &lim, &sp, Pricing::Live).unwrap();
        assert!(!trip.penalized);
        assert_eq!(trip.nodes.first(), Some(&s.node));
        assert_eq!(trip.nodes.last(), Some(&target));
        let mut t = s.time;
        let mut v = s.speed;
        for step in &trip.steps {
            let traj = step.traj.unwrap();
            assert_eq!(traj.t0(), t);
            assert!((traj.entry_speed() - v).abs() < 1e-12);
            t = traj.tf();
            v = traj.exit_speed();
        }
        assert_eq!(t, trip.arrival);
        let bf = brute_force_arrival(&g, &led, &s, target, &lim, &sp).unwrap();
        assert!((bf - trip.arrival).abs() < 1e-9, "{bf} vs {}", trip.arrival);
    }

    #[test]
    fn second_identical_request_is_not_faster() {
        let g = grid();
        let mut led = Ledgers::new(&g);
        let lim = MotionLimits::default();
        let sp = SafetyParams::default();
        let o = g.nodes().iter().find(|n| n.kind == NodeKind::Intersection).unwrap().id;
        let d = g.nodes().iter().rev().find(|n| n.kind == NodeKind::Intersection).unwrap().id;
        let r0 = TravelRequest { id: 0, station: g.stations()[0], origin: o, destination: d, start_time: 0.0 };
        let r1 = TravelRequest { id: 1, ..r0 };
        let a = route_whole_request(&r0, &g, &mut led, &lim, &sp, 0.0).unwrap();
        let b = route_whole_request(&r1, &g, &mut led, &lim, &sp, 0.0).unwrap();
        assert!(a.failed.is_none());
        assert!(b.trips[0].arrival >= a.trips[0].arrival);
        assert!(led.violations(&sp).is_empty());
    }
}
