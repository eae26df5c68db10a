//! The routing decision unit: processes requests in order, in proposed or
//! baseline mode, and accumulates metrics.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coord::{CoordError, Ledgers, SafetyParams, Traversal};
use crate::motion::{MotionError, MotionLimits};
use crate::netgraph::{EdgeId, IntersectionId, NodeId, PathId, RoadGraph, Scenario, TravelRequest};
use crate::route::{
    drive_route, route_request_with, shortest_time_route, LegPlanner, LivePlanner, Pricing, RequestOutcome,
    RouteError, StartState, Trip, TripKind,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Proposed,
    Baseline,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Proposed => "proposed",
            Mode::Baseline => "baseline",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "proposed" => Ok(Mode::Proposed),
            "baseline" => Ok(Mode::Baseline),
            _ => Err(format!("unknown mode {s:?}, expected proposed or baseline")),
        }
    }
}

/// What a baseline vehicle sees when it prices edges at the start of a leg.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Foresight {
    /// Every committed trajectory, including future motion.
    #[default]
    Committed,
    /// Only traversals already under way at the leg start.
    Instantaneous,
}

impl fmt::Display for Foresight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Foresight::Committed => "committed",
            Foresight::Instantaneous => "instantaneous",
        })
    }
}

impl FromStr for Foresight {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "committed" => Ok(Foresight::Committed),
            "instantaneous" => Ok(Foresight::Instantaneous),
            _ => Err(format!("unknown foresight {s:?}, expected committed or instantaneous")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub mode: Mode,
    pub limits: MotionLimits,
    pub safety: SafetyParams,
    /// Stop at pick-up and drop-off, seconds.
    pub dwell: f64,
    pub baseline_foresight: Foresight,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mode: Mode::Proposed,
            limits: MotionLimits::default(),
            safety: SafetyParams::default(),
            dwell: 0.0,
            baseline_foresight: Foresight::Committed,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.limits.validate()?;
        self.safety.validate()?;
        if !(self.dwell >= 0.0 && self.dwell.is_finite()) {
            return Err(SimError::Config(format!("dwell must be a finite non-negative time, got {}", self.dwell)));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Coord(#[from] CoordError),
    #[error("request {request}: {source}")]
    Route { request: u32, source: RouteError },
}

/// Travel time of one request, split by leg.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RequestRecord {
    pub request: u32,
    pub start_time: f64,
    pub leg_times: [f64; 3],
    pub failed: Option<TripKind>,
}

impl RequestRecord {
    pub fn total(&self) -> f64 {
        self.leg_times.iter().fold(0.0, |a, b| a + b)
    }
}

#[derive(Clone, Debug)]
pub struct SimReport {
    pub mode: Mode,
    pub records: Vec<RequestRecord>,
    /// Committed traversals per directed edge, indexed by edge id.
    pub usage: Vec<u64>,
    /// Wall-clock seconds spent routing.
    pub runtime_s: f64,
}

impl SimReport {
    pub fn total(&self) -> f64 {
        self.records.iter().map(RequestRecord::total).fold(0.0, |a, b| a + b)
    }

    pub fn failed(&self) -> usize {
        self.records.iter().filter(|r| r.failed.is_some()).count()
    }
}

/// A finished run together with the ledgers it committed to.
#[derive(Clone, Debug)]
pub struct SimRun {
    pub report: SimReport,
    pub ledgers: Ledgers,
    pub trips: Vec<Vec<Trip>>,
}

/// Routes a leg by a static search over edge costs frozen at the leg start,
/// then drives the fixed route at the actual arrival times.
pub struct BaselinePlanner {
    pub foresight: Foresight,
}

impl LegPlanner for BaselinePlanner {
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
        let at = start.time;
        let under_way = move |t: &Traversal| t.traj.t0() <= at;
        let visible: Option<&dyn Fn(&Traversal) -> bool> = match self.foresight {
            Foresight::Committed => None,
            Foresight::Instantaneous => Some(&under_way),
        };
        let frozen = shortest_time_route(g, ledgers, start, target, kind, lim, sp, Pricing::Frozen { at, visible })?;
        drive_route(g, ledgers, start, &frozen.nodes, kind, lim, sp)
    }
}

/// Routes one request the baseline way.
pub fn baseline_request(
    req: &TravelRequest,
    g: &RoadGraph,
    ledgers: &mut Ledgers,
    cfg: &SimConfig,
) -> Result<RequestOutcome, RouteError> {
    let planner = BaselinePlanner { foresight: cfg.baseline_foresight };
    route_request_with(&planner, req, g, ledgers, &cfg.limits, &cfg.safety, cfg.dwell)
}

/// Processes every request in index order.
pub fn run(scenario: &Scenario, cfg: &SimConfig) -> Result<SimRun, SimError> {
    cfg.validate()?;
    let g = &scenario.graph;
    let clock = Instant::now();
    let mut ledgers = Ledgers::new(g);
    let planner: Box<dyn LegPlanner> = match cfg.mode {
        Mode::Proposed => Box::new(LivePlanner),
        Mode::Baseline => Box::new(BaselinePlanner { foresight: cfg.baseline_foresight }),
    };
    let mut records = Vec::with_capacity(scenario.requests.len());
    let mut trips = Vec::with_capacity(scenario.requests.len());
    for req in &scenario.requests {
        let out = route_request_with(planner.as_ref(), req, g, &mut ledgers, &cfg.limits, &cfg.safety, cfg.dwell)
            .map_err(|source| SimError::Route { request: req.id, source })?;
        if let Some(kind) = out.failed {
            log::debug!("request {} failed on its {kind:?} leg", req.id);
        }
        records.push(RequestRecord {
            request: req.id,
            start_time: req.start_time,
            leg_times: out.leg_times,
            failed: out.failed,
        });
        trips.push(out.trips);
    }
    let usage = ledgers.lanes().iter().map(|l| l.len() as u64).collect();
    let report = SimReport { mode: cfg.mode, records, usage, runtime_s: clock.elapsed().as_secs_f64() };
    Ok(SimRun { report, ledgers, trips })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UsageRow {
    pub edge_from: NodeId,
    pub edge_to: NodeId,
    pub count: u64,
    /// Traversals per request.
    pub rate: f64,
}

/// Per-edge traversal counts and per-request rates.
pub fn road_usage(report: &SimReport, g: &RoadGraph) -> Vec<UsageRow> {
    let n = report.records.len().max(1) as f64;
    g.edges()
        .iter()
        .map(|e| {
            let count = report.usage[e.id.index()];
            UsageRow { edge_from: e.from, edge_to: e.to, count, rate: count as f64 / n }
        })
        .collect()
}

/// Max over mean of per-edge usage; 0 when nothing was driven.
pub fn usage_concentration(usage: &[u64]) -> f64 {
    let total: u64 = usage.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mean = total as f64 / usage.len() as f64;
    *usage.iter().max().unwrap_or(&0) as f64 / mean
}

/// A breach found by the sampled audit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditFinding {
    pub kind: &'static str,
    pub vehicles: (u32, u32),
    pub time: f64,
    pub margin: f64,
}

/// Slack for sampled checks, meters.
const AUDIT_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Lane {
    Road(EdgeId),
    Cell(IntersectionId, PathId),
}

/// Where a committed traversal sits physically: the approach lane it starts
/// on is the tail of its inlet road, then comes its cell path if any, then
/// its own road.
#[derive(Clone, Copy)]
struct Layout {
    inlet_edge: Option<(EdgeId, f64)>,
    approach: f64,
}

fn layout(g: &RoadGraph, t: &Traversal) -> Layout {
    match t.segment.head {
        None => Layout { inlet_edge: None, approach: 0.0 },
        Some(h) => Layout { inlet_edge: Some((h.inlet, g.edge(h.inlet).length)), approach: h.approach },
    }
}

fn place(t: &Traversal, lay: &Layout, time: f64) -> (Lane, f64) {
    let pos = t.traj.position(time).clamp(0.0, t.segment.seg_len);
    match lay.inlet_edge {
        Some((inlet, len)) if pos < lay.approach => (Lane::Road(inlet), len - lay.approach + pos),
        _ => match t.segment.crossing {
            Some(c) if pos < t.segment.merge_offset => (Lane::Cell(c.intersection, c.path), pos - lay.approach),
            _ => (Lane::Road(t.segment.edge), pos - t.segment.merge_offset),
        },
    }
}

/// Independent safety audit by sampling every committed trajectory on a
/// fixed time grid of width `step`. Vehicles sharing a physical lane at a
/// sample instant must keep the following gap; crossing pairs and pairs
/// merging onto one road must satisfy the conflict-point rule with sampled
/// maxima.
pub fn sampled_audit(g: &RoadGraph, ledgers: &Ledgers, sp: &SafetyParams, step: f64) -> Vec<AuditFinding> {
    let trs = ledgers.traversals();
    let lays: Vec<Layout> = trs.iter().map(|t| layout(g, t)).collect();
    let mut findings = Vec::new();
    let mut seen = BTreeSet::new();
    let mut report = |kind: &'static str, a: u32, b: u32, time: f64, margin: f64, out: &mut Vec<AuditFinding>| {
        if seen.insert((kind, a.min(b), a.max(b))) {
            out.push(AuditFinding { kind, vehicles: (a, b), time, margin });
        }
    };

    // Rear-end: sweep the grid with an active set.
    let mut order: Vec<usize> = (0..trs.len()).collect();
    order.sort_by(|&a, &b| trs[a].traj.t0().total_cmp(&trs[b].traj.t0()).then(a.cmp(&b)));
    let present = |t: &Traversal, time: f64| {
        time >= t.traj.t0() && (time < t.traj.tf() || (t.next.is_none() && time <= t.traj.tf()))
    };
    if let (Some(&first), Some(last_end)) =
        (order.first(), trs.iter().map(|t| t.traj.tf()).max_by(|a, b| a.total_cmp(b)))
    {
        let mut k = (trs[first].traj.t0() / step).floor() as i64;
        let mut next = 0;
        let mut active: Vec<usize> = Vec::new();
        let mut placed: Vec<(Lane, f64, usize)> = Vec::new();
        loop {
            let time = k as f64 * step;
            if time > last_end {
                break;
            }
            while next < order.len() && trs[order[next]].traj.t0() <= time {
                active.push(order[next]);
                next += 1;
            }
            active.retain(|&i| time <= trs[i].traj.tf());
            if active.is_empty() && next < order.len() {
                k = ((trs[order[next]].traj.t0() / step).ceil() as i64).max(k + 1);
                continue;
            }
            placed.clear();
            for &i in &active {
                if present(&trs[i], time) {
                    let (lane, s) = place(&trs[i], &lays[i], time);
                    placed.push((lane, s, i));
                }
            }
            placed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            for w in placed.windows(2) {
                let ((la, sa, ia), (lb, sb, ib)) = (w[0], w[1]);
                if la != lb || trs[ia].vehicle == trs[ib].vehicle {
                    continue;
                }
                let margin = sb - sa - sp.gap(trs[ia].traj.speed(time));
                if margin < -AUDIT_TOL {
                    report("rear-end", trs[ia].vehicle, trs[ib].vehicle, time, margin, &mut findings);
                }
            }
            k += 1;
        }
    }

    // Lateral: every overlapping pair of crossings with a shared conflict point.
    for coord in ledgers.coordinators() {
        let mut ids: Vec<usize> = coord.ids().map(|id| id.0 as usize).collect();
        ids.sort_by(|&a, &b| trs[a].traj.t0().total_cmp(&trs[b].traj.t0()));
        for (x, &a) in ids.iter().enumerate() {
            for &b in &ids[x + 1..] {
                let (ta, tb) = (&trs[a], &trs[b]);
                if tb.traj.t0() > ta.traj.tf() {
                    break;
                }
                let (Some(pa), Some(pb)) = (ta.segment.path(), tb.segment.path()) else { continue };
                if ta.vehicle == tb.vehicle || pa == pb {
                    continue;
                }
                let approach = lays[a].approach;
                for (ca, cb) in coord.geometry.conflicts_between(pa, pb) {
                    let (m1, m2) = sampled_margins(ta, approach + ca, tb, lays[b].approach + cb, sp, step);
                    if m1 > AUDIT_TOL && m2 > AUDIT_TOL {
                        report("lateral", ta.vehicle, tb.vehicle, tb.traj.t0(), m1.min(m2), &mut findings);
                    }
                }
            }
        }
    }
    // Merges: crossing rule at the merge point for traversals of one road
    // arriving on different branches.
    for lane in ledgers.lanes() {
        let mut ids: Vec<usize> = lane.ids().map(|id| id.0 as usize).collect();
        ids.sort_by(|&a, &b| trs[a].traj.t0().total_cmp(&trs[b].traj.t0()));
        for (x, &a) in ids.iter().enumerate() {
            for &b in &ids[x + 1..] {
                let (ta, tb) = (&trs[a], &trs[b]);
                if tb.traj.t0() > ta.traj.tf() {
                    break;
                }
                let branch = |t: &Traversal| t.segment.head.map(|h| h.inlet);
                if ta.vehicle == tb.vehicle || branch(ta) == branch(tb) {
                    continue;
                }
                let (m1, m2) = sampled_margins(ta, ta.segment.merge_offset, tb, tb.segment.merge_offset, sp, step);
                if m1 > AUDIT_TOL && m2 > AUDIT_TOL {
                    report("merge", ta.vehicle, tb.vehicle, tb.traj.t0(), m1.min(m2), &mut findings);
                }
            }
        }
    }
    findings
}

/// Grid times of a trajectory's window, endpoints included.
fn ticks(t: &Traversal, step: f64) -> impl Iterator<Item = f64> + '_ {
    let (t0, tf) = (t.traj.t0(), t.traj.tf());
    let first = (t0 / step).ceil() as i64;
    let last = (tf / step).floor() as i64;
    std::iter::once(t0).chain((first..=last).map(move |k| k as f64 * step)).chain(std::iter::once(tf))
}

/// Sampled branch margins of the conflict-point rule: the largest sampled
/// `p + phi v + rho - pc` of one vehicle while the other is still sampled
/// short of its conflict position.
fn sampled_margins(a: &Traversal, pc_a: f64, b: &Traversal, pc_b: f64, sp: &SafetyParams, step: f64) -> (f64, f64) {
    let last_short = |t: &Traversal, pc: f64| {
        ticks(t, step).take_while(|&s| t.traj.position(s) < pc).last()
    };
    let branch = |t: &Traversal, pc: f64, until: Option<f64>| match until {
        None => f64::NEG_INFINITY,
        Some(u) => ticks(t, step)
            .take_while(|&s| s <= u)
            .map(|s| t.traj.position(s) + sp.phi * t.traj.speed(s) + sp.rho - pc)
            .fold(f64::NEG_INFINITY, f64::max),
    };
    (branch(a, pc_a, last_short(b, pc_b)), branch(b, pc_b, last_short(a, pc_a)))
}

fn opt_leg(k: Option<TripKind>) -> &'static str {
    match k {
        None => "",
        Some(TripKind::Pickup) => "pickup",
        Some(TripKind::Service) => "service",
        Some(TripKind::Return) => "return",
    }
}

pub const PER_REQUEST_HEADER: &str = "request_id,mode,start_time,pickup_s,service_s,return_s,total_s,failed";
pub const USAGE_HEADER: &str = "edge_from,edge_to,count,rate";
pub const SUMMARY_HEADER: &str =
    "seed,mode,requests,total_s,total_h,mean_s,failed,usage_max_over_mean,analytic_violations,sampled_violations";

pub fn write_per_request<W: Write>(mut w: W, report: &SimReport) -> io::Result<()> {
    writeln!(w, "{PER_REQUEST_HEADER}")?;
    for r in &report.records {
        let [p, s, ret] = r.leg_times;
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            r.request,
            report.mode,
            r.start_time,
            p,
            s,
            ret,
            r.total(),
            opt_leg(r.failed)
        )?;
    }
    Ok(())
}

pub fn write_usage<W: Write>(mut w: W, report: &SimReport, g: &RoadGraph) -> io::Result<()> {
    writeln!(w, "{USAGE_HEADER}")?;
    for u in road_usage(report, g) {
        writeln!(w, "{},{},{},{:.6}", u.edge_from, u.edge_to, u.count, u.rate)?;
    }
    Ok(())
}

/// One summary line per (seed, mode).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub seed: u64,
    pub mode: Mode,
    pub requests: usize,
    pub total_s: f64,
    pub failed: usize,
    pub usage_max_over_mean: f64,
    pub analytic_violations: usize,
    pub sampled_violations: usize,
}

impl SummaryRow {
    pub fn new(seed: u64, report: &SimReport, analytic: usize, sampled: usize) -> Self {
        SummaryRow {
            seed,
            mode: report.mode,
            requests: report.records.len(),
            total_s: report.total(),
            failed: report.failed(),
            usage_max_over_mean: usage_concentration(&report.usage),
            analytic_violations: analytic,
            sampled_violations: sampled,
        }
    }
}

pub fn write_summary<W: Write>(mut w: W, rows: &[SummaryRow]) -> io::Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for r in rows {
        let mean = if r.requests == 0 { 0.0 } else { r.total_s / r.requests as f64 };
        writeln!(
            w,
            "{},{},{},{:.6},{:.6},{:.6},{},{:.6},{},{}",
            r.seed,
            r.mode,
            r.requests,
            r.total_s,
            r.total_s / 3600.0,
            mean,
            r.failed,
            r.usage_max_over_mean,
            r.analytic_violations,
            r.sampled_violations
        )?;
    }
    Ok(())
}

pub const COMPARISON_HEADER: &str = "seed,baseline_total_s,proposed_total_s,improvement_pct,baseline_failed,proposed_failed,baseline_usage_max_over_mean,proposed_usage_max_over_mean";

/// Percentage by which `proposed` undercuts `baseline`; 0 when the baseline is 0.
pub fn improvement_pct(baseline: f64, proposed: f64) -> f64 {
    if baseline > 0.0 {
        100.0 * (baseline - proposed) / baseline
    } else {
        0.0
    }
}

/// Baseline against proposed for one seed, or the mean over seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    /// Seed number, or `mean` for the aggregate line.
    pub label: String,
    pub baseline_total_s: f64,
    pub proposed_total_s: f64,
    pub baseline_failed: f64,
    pub proposed_failed: f64,
    pub baseline_usage: f64,
    pub proposed_usage: f64,
}

impl ComparisonRow {
    pub fn new(seed: u64, baseline: &SimReport, proposed: &SimReport) -> Self {
        ComparisonRow {
            label: seed.to_string(),
            baseline_total_s: baseline.total(),
            proposed_total_s: proposed.total(),
            baseline_failed: baseline.failed() as f64,
            proposed_failed: proposed.failed() as f64,
            baseline_usage: usage_concentration(&baseline.usage),
            proposed_usage: usage_concentration(&proposed.usage),
        }
    }

    pub fn improvement_pct(&self) -> f64 {
        improvement_pct(self.baseline_total_s, self.proposed_total_s)
    }

    /// Field-wise mean of `rows`; `None` when empty.
    pub fn mean(rows: &[ComparisonRow]) -> Option<Self> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let avg = |f: fn(&ComparisonRow) -> f64| rows.iter().map(f).fold(0.0, |a, b| a + b) / n;
        Some(ComparisonRow {
            label: "mean".into(),
            baseline_total_s: avg(|r| r.baseline_total_s),
            proposed_total_s: avg(|r| r.proposed_total_s),
            baseline_failed: avg(|r| r.baseline_failed),
            proposed_failed: avg(|r| r.proposed_failed),
            baseline_usage: avg(|r| r.baseline_usage),
            proposed_usage: avg(|r| r.proposed_usage),
        })
    }
}

/// Writes one line per seed followed by their mean.
pub fn write_comparison<W: Write>(mut w: W, rows: &[ComparisonRow]) -> io::Result<()> {
    writeln!(w, "{COMPARISON_HEADER}")?;
    for r in rows.iter().cloned().chain(ComparisonRow::mean(rows)) {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{},{},{:.6},{:.6}",
            r.label,
            r.baseline_total_s,
            r.proposed_total_s,
            r.improvement_pct(),
            r.baseline_failed,
            r.proposed_failed,
            r.baseline_usage,
            r.proposed_usage
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{generate_scenario, DemandConfig, GridConfig};
    use crate::route::brute_force_arrival;

    fn scenario(requests: usize, horizon: f64, seed: u64) -> Scenario {
        generate_scenario(&GridConfig::default(), &DemandConfig { requests, horizon, seed }).unwrap()
    }

    #[test]
    fn zero_requests() {
        let s = scenario(0, 100.0, 1);
        let r = run(&s, &SimConfig::default()).unwrap().report;
        assert_eq!(r.total(), 0.0);
        assert!(r.usage.iter().all(|&c| c == 0));
        assert_eq!(usage_concentration(&r.usage), 0.0);
    }

    #[test]
    fn single_request_matches_free_flow_legs() {
        let s = scenario(1, 100.0, 3);
        let cfg = SimConfig::default();
        let out = run(&s, &cfg).unwrap();
        let req = &s.requests[0];
        let empty = Ledgers::new(&s.graph);
        // Each leg on an empty network equals the exhaustive minimum from the
        // state the previous leg ended in.
        let mut state = StartState::at_station(req.id, req.station, req.start_time, &cfg.limits);
        for (k, trip) in out.trips[0].iter().enumerate() {
            let bf = brute_force_arrival(&s.graph, &empty, &state, trip.end, &cfg.limits, &cfg.safety).unwrap();
            assert!((bf - trip.arrival).abs() < 1e-9, "leg {k}: {bf} vs {}", trip.arrival);
            let last = trip.steps.last().unwrap();
            state = StartState {
                node: trip.end,
                time: trip.arrival,
                speed: last.traj.unwrap().exit_speed(),
                pred: Some(last.from),
                last: Some(crate::coord::PrevPiece { id: None, segment: last.segment, traj: last.traj.unwrap() }),
                ..state
            };
        }
        let used: u64 = out.report.usage.iter().sum();
        let steps: usize = out.trips[0].iter().map(|t| t.steps.len()).sum();
        assert_eq!(used as usize, steps);
    }

    #[test]
    fn modes_agree_on_a_single_request() {
        let s = scenario(1, 100.0, 9);
        let p = run(&s, &SimConfig::default()).unwrap().report;
        let b = run(&s, &SimConfig { mode: Mode::Baseline, ..SimConfig::default() }).unwrap().report;
        assert_eq!(p.records[0].leg_times, b.records[0].leg_times);
    }

    #[test]
    fn run_is_deterministic_and_safe() {
        let s = scenario(40, 120.0, 4);
        for mode in [Mode::Proposed, Mode::Baseline] {
            let cfg = SimConfig { mode, ..SimConfig::default() };
            let a = run(&s, &cfg).unwrap();
            let b = run(&s, &cfg).unwrap();
            let (mut x, mut y) = (Vec::new(), Vec::new());
            write_per_request(&mut x, &a.report).unwrap();
            write_per_request(&mut y, &b.report).unwrap();
            assert_eq!(x, y);
            assert!(a.ledgers.violations(&cfg.safety).is_empty());
            assert_eq!(sampled_audit(&s.graph, &a.ledgers, &cfg.safety, 0.01), vec![]);
        }
    }

    #[test]
    fn audit_catches_a_planted_collision() {
        use crate::coord::Probe;
        use crate::route::edge_travel_time;
        let s = scenario(0, 100.0, 1);
        let g = &s.graph;
        let lim = MotionLimits::default();
        let sp = SafetyParams::default();
        let e = g.out_edges(g.stations()[0])[0];
        // Commit two vehicles with an unsafe gap by using a permissive gap.
        let loose = SafetyParams { rho: 1e-3, phi: 0.0, ..sp };
        let mut led = Ledgers::new(g);
        for (v, t0) in [(0u32, 0.0), (1, 0.5)] {
            let c = edge_travel_time(g, &led, v, e, t0, 10.0, None, None, &lim, &loose).unwrap();
            let probe = Probe { vehicle: v, segment: c.segment, t0, v0: 10.0, prev: None };
            led.commit(&probe, c.traj.unwrap(), &lim, &loose).unwrap();
        }
        let f = sampled_audit(g, &led, &sp, 0.01);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].kind, "rear-end");
        assert!(!led.violations(&sp).is_empty());
    }

    #[test]
    fn csv_headers_are_stable() {
        let s = scenario(2, 50.0, 2);
        let r = run(&s, &SimConfig::default()).unwrap().report;
        let mut buf = Vec::new();
        write_per_request(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some(PER_REQUEST_HEADER));
        assert_eq!(text.lines().count(), 3);
        let mut buf = Vec::new();
        write_usage(&mut buf, &r, &s.graph).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), s.graph.edges().len() + 1);
    }

    #[test]
    fn mode_and_foresight_parse() {
        assert_eq!("baseline".parse::<Mode>(), Ok(Mode::Baseline));
        assert!("x".parse::<Mode>().is_err());
        assert_eq!("instantaneous".parse::<Foresight>(), Ok(Foresight::Instantaneous));
        assert_eq!(Mode::Proposed.to_string(), "proposed");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            /// Every request yields a record, totals add up, and usage counts
            /// the committed traversals.
            #[test]
            fn runs_conserve_requests_and_traversals(seed in any::<u64>(), requests in 0usize..25, baseline in any::<bool>()) {
                let s = scenario(requests, 300.0, seed);
                let mode = if baseline { Mode::Baseline } else { Mode::Proposed };
                let out = run(&s, &SimConfig { mode, ..SimConfig::default() }).unwrap();
                let r = &out.report;
                prop_assert_eq!(r.records.len(), requests);
                let sum: f64 = r.records.iter().map(RequestRecord::total).sum();
                prop_assert!((r.total() - sum).abs() < 1e-6);
                let steps: usize = out.trips.iter().flatten().filter(|t| !t.penalized).map(|t| t.steps.len()).sum();
                prop_assert_eq!(r.usage.iter().sum::<u64>() as usize, steps);
                prop_assert_eq!(out.ledgers.traversals().len(), steps);
                for (rec, trips) in r.records.iter().zip(&out.trips) {
                    let expected = if rec.failed.is_some() { trips.len() } else { 3 };
                    prop_assert_eq!(trips.len(), expected);
                }
            }

            #[test]
            fn concentration_is_scale_free(usage in prop::collection::vec(0u64..100, 1..50), k in 1u64..10) {
                let c = usage_concentration(&usage);
                let scaled: Vec<u64> = usage.iter().map(|u| u * k).collect();
                prop_assert!((usage_concentration(&scaled) - c).abs() < 1e-9);
                if usage.iter().any(|&u| u > 0) {
                    prop_assert!(c >= 1.0 - 1e-12);
                }
            }
        }
    }
}
