//! Coordination ledgers and the minimum-exit-time search.
//!
//! Every committed edge traversal lives in one arena. Each edge has a lane
//! ledger and each intersection a coordinator ledger. The ledgers only store;
//! they never re-plan a committed vehicle.
//!
//! A traversal of an edge leaving an intersection starts at the inlet node,
//! which sits at the upstream end of the approach lane, crosses the cell on
//! one of its twelve paths, and then drives the road. Rear-end safety is
//! checked in two kinds of frame:
//!
//! - the road frame of an edge, where position zero is the start of the road
//!   beyond the cell. Approach and cell path get negative coordinates, so
//!   vehicles merging from different inlets form a virtual platoon;
//! - the approach frame of an inlet, shared by every vehicle entering the
//!   cell from that arm until it reaches the cell boundary.
//!
//! A leader's committed next traversal extends it past the end of its own
//! segment, so a follower keeps its distance until it leaves the frame too.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::motion::{exit_window, solve_coefficients, CubicTrajectory, MotionLimits};
use crate::netgraph::{EdgeId, IntersectionGeometry, IntersectionId, NodeId, PathId, RoadGraph};
use crate::poly::Cubic;

/// Slack on the gap and conflict inequalities, meters.
pub const SAFETY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct SafetyParams {
    /// Standstill distance, meters.
    pub rho: f64,
    /// Reaction time, seconds.
    pub phi: f64,
    /// Exit-time search step, seconds.
    pub dt: f64,
    /// Travel time charged when no feasible exit time exists, seconds.
    pub penalty: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        SafetyParams { rho: 2.0, phi: 0.5, dt: 0.1, penalty: 1e4 }
    }
}

impl SafetyParams {
    pub fn validate(&self) -> Result<(), CoordError> {
        let ok = self.rho > 0.0
            && self.phi >= 0.0
            && self.dt > 0.0
            && self.penalty > 0.0
            && [self.rho, self.phi, self.dt, self.penalty].iter().all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(CoordError::InvalidParams(*self))
        }
    }

    /// Safe following distance at speed `v`.
    pub fn gap(&self, v: f64) -> f64 {
        self.rho + self.phi * v
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoordError {
    #[error("invalid safety parameters {0:?}")]
    InvalidParams(SafetyParams),
    #[error("path {path} does not touch conflict point {conflict}")]
    NotOnPath { path: PathId, conflict: usize },
    #[error("trajectory does not match its probe: {0}")]
    Mismatch(&'static str),
    #[error("vehicle {vehicle} on edge {edge:?} violates {what} against vehicle {other}")]
    Unsafe { vehicle: u32, edge: EdgeId, other: u32, what: &'static str },
    #[error("previous traversal {0:?} is unknown, foreign, or already continued")]
    BadPrevious(TraversalId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TraversalId(pub u32);

/// The cell crossing at the start of a segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing {
    pub intersection: IntersectionId,
    pub path: PathId,
    /// Approach lane length before the cell boundary.
    pub approach: f64,
}

/// The approach lane a segment starts on: the last stretch of the road
/// leading into the node it leaves from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Head {
    pub inlet: EdgeId,
    pub approach: f64,
}

/// How one edge is driven as a single motion segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub edge: EdgeId,
    pub head: Option<Head>,
    pub crossing: Option<Crossing>,
    /// Distance from the segment start to the start of the road proper.
    pub merge_offset: f64,
    pub seg_len: f64,
}

impl Segment {
    /// The segment for driving `edge` after arriving from `pred`; `None` when
    /// that would be a U-turn inside an intersection.
    ///
    /// If the edge leaves an intersection the segment begins with that
    /// intersection's approach lane and cell path; if it leaves a plain
    /// junction, with the junction's approach lane on the road from `pred`.
    /// The approach lane at the end of the edge is left to the next segment.
    pub fn new(g: &RoadGraph, edge: EdgeId, pred: Option<NodeId>) -> Option<Segment> {
        let e = g.edge(edge);
        let body = e.length - g.approach_at(e.to);
        if let Some(spec) = g.intersection_at(e.from) {
            let path = spec.path_for(pred, e.to)?;
            let inlet = g.edge_between(spec.inlets[path.inlet().index()], spec.node)?;
            let head = spec.approach + spec.geometry.path(path).length;
            return Some(Segment {
                edge,
                head: Some(Head { inlet, approach: spec.approach }),
                crossing: Some(Crossing { intersection: spec.id, path, approach: spec.approach }),
                merge_offset: head,
                seg_len: head + body,
            });
        }
        let approach = g.approach_at(e.from);
        match pred.and_then(|p| g.edge_between(p, e.from)) {
            Some(inlet) if approach > 0.0 => Some(Segment {
                edge,
                head: Some(Head { inlet, approach }),
                crossing: None,
                merge_offset: approach,
                seg_len: approach + body,
            }),
            _ => Some(Segment { edge, head: None, crossing: None, merge_offset: 0.0, seg_len: body }),
        }
    }

    pub fn path(&self) -> Option<PathId> {
        self.crossing.map(|c| c.path)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Traversal {
    pub vehicle: u32,
    pub segment: Segment,
    pub traj: CubicTrajectory,
    pub prev: Option<TraversalId>,
    pub next: Option<TraversalId>,
}

/// The piece a vehicle drove just before the probed segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrevPiece {
    /// Set when the piece is already committed.
    pub id: Option<TraversalId>,
    pub segment: Segment,
    pub traj: CubicTrajectory,
}

/// A request to price one segment for one vehicle entering at `(t0, v0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub vehicle: u32,
    pub segment: Segment,
    pub t0: f64,
    pub v0: f64,
    pub prev: Option<PrevPiece>,
}

type Entry = (f64, u32, TraversalId);

/// Committed traversals of one edge, ordered by entry time, and those that
/// start on the approach lane at its end.
#[derive(Clone, Debug, Default)]
pub struct LaneLedger {
    entries: Vec<Entry>,
    /// Longest time any entry stays in this road's frame, continuation included.
    max_span: f64,
    approach_entries: Vec<Entry>,
    approach_span: f64,
}

/// Committed traversals through one intersection, ordered by entry time.
#[derive(Clone, Debug)]
pub struct CoordinatorLedger {
    pub intersection: IntersectionId,
    pub geometry: Arc<IntersectionGeometry>,
    entries: Vec<Entry>,
    max_span: f64,
}

fn insert_sorted(entries: &mut Vec<Entry>, key: Entry) {
    let pos = entries.partition_point(|e| (e.0, e.1) <= (key.0, key.1));
    entries.insert(pos, key);
}

/// Entries that start no later than `hi` and, lasting at most `span`, may
/// still be present at `lo`.
fn window(entries: &[Entry], span: f64, lo: f64, hi: f64) -> &[Entry] {
    let a = entries.partition_point(|e| e.0 < lo - span);
    let b = entries.partition_point(|e| e.0 <= hi);
    &entries[a..b.max(a)]
}

impl LaneLedger {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = TraversalId> + '_ {
        self.entries.iter().map(|e| e.2)
    }

    /// Traversals whose segment starts on this road's approach lane.
    pub fn approach_ids(&self) -> impl Iterator<Item = TraversalId> + '_ {
        self.approach_entries.iter().map(|e| e.2)
    }
}

impl CoordinatorLedger {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = TraversalId> + '_ {
        self.entries.iter().map(|e| e.2)
    }
}

/// A trajectory placed in a frame: frame position is `traj.position(t) + shift`.
#[derive(Clone, Copy, Debug)]
struct Piece {
    traj: CubicTrajectory,
    shift: f64,
}

/// One vehicle in one frame: its own piece, possibly the piece continuing
/// it, and the time after which it no longer needs to follow anyone here.
#[derive(Clone, Copy, Debug)]
struct Track {
    own: Piece,
    cont: Option<Piece>,
    leave: f64,
    /// The road a road-frame track merges in from; tracks sharing it are
    /// already in line before the merge point.
    branch: Option<EdgeId>,
    /// When the track reaches frame position zero.
    merge_t: f64,
}

impl Track {
    fn start(&self) -> f64 {
        self.own.traj.t0()
    }

    fn end(&self) -> f64 {
        self.cont.map_or(self.own.traj.tf(), |c| c.traj.tf())
    }

    fn pieces(&self) -> impl Iterator<Item = &Piece> {
        std::iter::once(&self.own).chain(self.cont.iter())
    }

    fn pos(&self, t: f64) -> f64 {
        match self.cont {
            Some(c) if t > self.own.traj.tf() => c.traj.position(t) + c.shift,
            _ => self.own.traj.position(t) + self.own.shift,
        }
    }
}

/// The frames a segment takes part in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Frame {
    Road,
    Approach,
}

fn track_in(frame: Frame, seg: &Segment, traj: CubicTrajectory, cont: Option<CubicTrajectory>) -> Track {
    let reach = |p: f64| if p <= 0.0 { traj.t0() } else { traj.invert_position(p).unwrap_or(traj.tf()) };
    let (shift, leave, branch, merge_t) = match frame {
        Frame::Road => (-seg.merge_offset, traj.tf(), seg.head.map(|h| h.inlet), reach(seg.merge_offset)),
        Frame::Approach => {
            let a = seg.head.expect("approach frame needs a head").approach;
            (0.0, reach(a), None, traj.t0())
        }
    };
    Track {
        own: Piece { traj, shift },
        cont: cont.map(|c| Piece { traj: c, shift: shift + seg.seg_len }),
        leave,
        branch,
        merge_t,
    }
}

/// `x_lead - x_follow >= rho + phi * v_follow` from `from` until the follower
/// leaves the frame or the leader's track ends. Before `held_until` the
/// leader counts as standing at the merge point, frame position zero.
fn follow_ok(follower: &Track, leader: &Track, from: f64, held_until: f64, sp: &SafetyParams) -> bool {
    let end = follower.leave.min(leader.end());
    if from > end {
        return true;
    }
    let fp = &follower.own;
    if held_until > from {
        let hi = end.min(held_until);
        let f = fp.traj.taylor_at(from);
        let gap = f.scale(-1.0).sub(&f.derivative().scale(sp.phi)).add_const(-fp.shift - sp.rho);
        if gap.min_on(0.0, hi - from) < -SAFETY_TOL {
            return false;
        }
    }
    let from = from.max(held_until);
    if from > end {
        return true;
    }
    for lp in leader.pieces() {
        let lo = from.max(lp.traj.t0());
        let hi = end.min(lp.traj.tf());
        if lo > hi {
            continue;
        }
        let f = fp.traj.taylor_at(lo);
        let gap = lp
            .traj
            .taylor_at(lo)
            .sub(&f)
            .sub(&f.derivative().scale(sp.phi))
            .add_const(lp.shift - fp.shift - sp.rho);
        if gap.min_on(0.0, hi - lo) < -SAFETY_TOL {
            return false;
        }
    }
    true
}

/// Rear-end safety between two tracks in one frame. Tracks on one branch
/// are ordered at the first instant both are present. Tracks from different
/// branches are ordered by who reaches the merge point first; the other
/// stays a safe distance short of it until then. The one behind keeps its
/// gap for as long as it stays in the frame.
fn pair_ok(a: &Track, b: &Track, sp: &SafetyParams) -> bool {
    let ts = a.start().max(b.start());
    if ts > a.end() || ts > b.end() {
        return true;
    }
    if a.branch != b.branch {
        let (lead, fol) = if a.merge_t <= b.merge_t { (a, b) } else { (b, a) };
        return follow_ok(fol, lead, ts, lead.merge_t, sp);
    }
    if a.pos(ts) >= b.pos(ts) {
        follow_ok(b, a, ts, f64::NEG_INFINITY, sp)
    } else {
        follow_ok(a, b, ts, f64::NEG_INFINITY, sp)
    }
}

/// Rear-end check of `follower` against `leader` on a shared axis where the
/// leader has a head start of `offset` meters, over their common window.
pub fn rear_end_ok(follower: &CubicTrajectory, leader: &CubicTrajectory, offset: f64, sp: &SafetyParams) -> bool {
    let track = |traj: &CubicTrajectory, shift: f64| Track {
        own: Piece { traj: *traj, shift },
        cont: None,
        leave: traj.tf(),
        branch: None,
        merge_t: traj.t0(),
    };
    let (lead, fol) = (track(leader, offset), track(follower, 0.0));
    follow_ok(&fol, &lead, follower.t0().max(leader.t0()), f64::NEG_INFINITY, sp)
}

/// The two branch residuals of the combined conflict-point constraint:
/// `M1` (i stays a safe distance short of the point until k has reached it)
/// and `M2` (the mirror for k). An empty interval yields negative infinity.
pub fn lateral_margins(
    traj_i: &CubicTrajectory,
    pc_i: f64,
    traj_k: &CubicTrajectory,
    pc_k: f64,
    sp: &SafetyParams,
) -> (f64, f64) {
    let tc_i = traj_i.invert_position(pc_i).unwrap_or(traj_i.tf());
    let tc_k = traj_k.invert_position(pc_k).unwrap_or(traj_k.tf());
    let branch = |traj: &CubicTrajectory, pc: f64, until: f64| {
        let hi = until.min(traj.tf());
        if hi < traj.t0() {
            return f64::NEG_INFINITY;
        }
        let c: Cubic = *traj.local();
        c.add(&c.derivative().scale(sp.phi)).add_const(sp.rho - pc).max_on(0.0, hi - traj.t0())
    };
    (branch(traj_i, pc_i, tc_k), branch(traj_k, pc_k, tc_i))
}

/// Lateral safety of vehicle i on `path_i` and k on `path_k` at conflict `c`.
/// Trajectory positions are measured from the start of each cell path.
pub fn lateral_ok(
    traj_i: &CubicTrajectory,
    path_i: PathId,
    traj_k: &CubicTrajectory,
    path_k: PathId,
    c: &crate::netgraph::ConflictPoint,
    sp: &SafetyParams,
) -> Result<bool, CoordError> {
    if path_i == path_k {
        return Err(CoordError::NotOnPath { path: path_i, conflict: c.id });
    }
    let pc_i = c.position_on(path_i).ok_or(CoordError::NotOnPath { path: path_i, conflict: c.id })?;
    let pc_k = c.position_on(path_k).ok_or(CoordError::NotOnPath { path: path_k, conflict: c.id })?;
    let (m1, m2) = lateral_margins(traj_i, pc_i, traj_k, pc_k, sp);
    Ok(m1.min(m2) <= SAFETY_TOL)
}

/// Other vehicles' tracks in one frame the probe takes part in.
struct FrameSet {
    frame: Frame,
    /// Whether the probe appears as the continuation of its previous piece.
    via_prev: bool,
    others: Vec<(u32, Track)>,
}

/// A committed crossing: vehicle, trajectory and conflict-point positions.
type LateralEntry = (u32, CubicTrajectory, Vec<(f64, f64)>);

/// Everything one probe must be checked against, gathered once per search.
struct Relevant {
    frames: Vec<FrameSet>,
    /// Committed crossings sharing a conflict point, with segment positions
    /// `(mine, theirs)` of each point.
    lateral: Vec<LateralEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Verdict {
    Safe,
    RearEnd(u32),
    Lateral(u32),
}

#[derive(Clone, Debug)]
pub struct Ledgers {
    traversals: Vec<Traversal>,
    lanes: Vec<LaneLedger>,
    coordinators: Vec<CoordinatorLedger>,
    last_of_vehicle: BTreeMap<u32, TraversalId>,
}

impl Ledgers {
    pub fn new(g: &RoadGraph) -> Self {
        Ledgers {
            traversals: Vec::new(),
            lanes: vec![LaneLedger::default(); g.edges().len()],
            coordinators: g
                .intersections()
                .iter()
                .map(|s| CoordinatorLedger {
                    intersection: s.id,
                    geometry: Arc::clone(&s.geometry),
                    entries: Vec::new(),
                    max_span: 0.0,
                })
                .collect(),
            last_of_vehicle: BTreeMap::new(),
        }
    }

    pub fn traversals(&self) -> &[Traversal] {
        &self.traversals
    }

    pub fn traversal(&self, id: TraversalId) -> &Traversal {
        &self.traversals[id.0 as usize]
    }

    pub fn lane(&self, e: EdgeId) -> &LaneLedger {
        &self.lanes[e.index()]
    }

    pub fn lanes(&self) -> &[LaneLedger] {
        &self.lanes
    }

    pub fn coordinators(&self) -> &[CoordinatorLedger] {
        &self.coordinators
    }

    /// The most recent traversal committed for `vehicle`.
    pub fn last_of(&self, vehicle: u32) -> Option<TraversalId> {
        self.last_of_vehicle.get(&vehicle).copied()
    }

    fn track_of(&self, frame: Frame, id: TraversalId) -> Track {
        let t = self.traversal(id);
        track_in(frame, &t.segment, t.traj, t.next.map(|n| self.traversal(n).traj))
    }

    /// Tracks in `frame` of `seg` for committed traversals that are still in
    /// that frame at or after `from` and start by `horizon`.
    fn frame_members(
        &self,
        frame: Frame,
        seg: &Segment,
        from: f64,
        horizon: f64,
        seen: &dyn Fn(&Traversal) -> bool,
    ) -> Vec<(u32, Track)> {
        let candidates = match frame {
            Frame::Road => {
                let l = &self.lanes[seg.edge.index()];
                window(&l.entries, l.max_span, from, horizon)
            }
            Frame::Approach => {
                let l = &self.lanes[seg.head.expect("approach frame needs a head").inlet.index()];
                window(&l.approach_entries, l.approach_span, from, horizon)
            }
        };
        candidates
            .iter()
            .filter_map(|e| {
                let t = self.traversal(e.2);
                if !seen(t) {
                    return None;
                }
                let tr = self.track_of(frame, e.2);
                (tr.end() >= from).then_some((t.vehicle, tr))
            })
            .collect()
    }

    /// Committed traversals that can interact with `probe` for exit times up
    /// to `horizon`. With `visible` set, only entries it accepts are seen.
    fn gather(&self, probe: &Probe, horizon: f64, visible: Option<&dyn Fn(&Traversal) -> bool>) -> Relevant {
        let seen = |t: &Traversal| t.vehicle != probe.vehicle && visible.is_none_or(|f| f(t));
        let seg = &probe.segment;
        let mut frames = vec![FrameSet {
            frame: Frame::Road,
            via_prev: false,
            others: self.frame_members(Frame::Road, seg, probe.t0, horizon, &seen),
        }];
        if seg.head.is_some() {
            frames.push(FrameSet {
                frame: Frame::Approach,
                via_prev: false,
                others: self.frame_members(Frame::Approach, seg, probe.t0, horizon, &seen),
            });
        }
        if let Some(prev) = &probe.prev {
            let from = prev.traj.tf();
            frames.push(FrameSet {
                frame: Frame::Road,
                via_prev: true,
                others: self.frame_members(Frame::Road, &prev.segment, from, horizon, &seen),
            });
            if prev.segment.head.is_some() {
                frames.push(FrameSet {
                    frame: Frame::Approach,
                    via_prev: true,
                    others: self.frame_members(Frame::Approach, &prev.segment, from, horizon, &seen),
                });
            }
        }

        let mut lateral = Vec::new();
        if let Some(cr) = seg.crossing {
            let co = &self.coordinators[cr.intersection.index()];
            for e in window(&co.entries, co.max_span, probe.t0, horizon) {
                let t = self.traversal(e.2);
                if !seen(t) || t.traj.tf() < probe.t0 {
                    continue;
                }
                let theirs = t.segment.crossing.expect("coordinator entries cross the cell");
                if theirs.path == cr.path {
                    continue;
                }
                let points: Vec<(f64, f64)> = co
                    .geometry
                    .conflicts_between(cr.path, theirs.path)
                    .map(|(a, b)| (cr.approach + a, theirs.approach + b))
                    .collect();
                if !points.is_empty() {
                    lateral.push((t.vehicle, t.traj, points));
                }
            }
        }
        Relevant { frames, lateral }
    }

    fn verdict(probe: &Probe, cand: &CubicTrajectory, rel: &Relevant, sp: &SafetyParams) -> Verdict {
        for fs in &rel.frames {
            let mine = if fs.via_prev {
                let prev = probe.prev.as_ref().expect("prev frames need a prev piece");
                track_in(fs.frame, &prev.segment, prev.traj, Some(*cand))
            } else {
                track_in(fs.frame, &probe.segment, *cand, None)
            };
            for (v, other) in &fs.others {
                if !pair_ok(&mine, other, sp) {
                    return Verdict::RearEnd(*v);
                }
            }
        }
        for (v, traj, points) in &rel.lateral {
            for &(pc_i, pc_k) in points {
                let (m1, m2) = lateral_margins(cand, pc_i, traj, pc_k, sp);
                if m1.min(m2) > SAFETY_TOL {
                    return Verdict::Lateral(*v);
                }
            }
        }
        Verdict::Safe
    }

    /// Whether `cand` is within limits and safe against everything committed.
    pub fn is_feasible(&self, probe: &Probe, cand: &CubicTrajectory, lim: &MotionLimits, sp: &SafetyParams) -> bool {
        if !cand.limits_respected(lim) {
            return false;
        }
        let rel = self.gather(probe, cand.tf(), None);
        Self::verdict(probe, cand, &rel, sp) == Verdict::Safe
    }

    /// Smallest exit time on the grid `t_under + k dt` whose cubic meets the
    /// limits and every safety constraint; `None` once the grid passes
    /// `t_over`.
    pub fn min_exit_time(&self, probe: &Probe, lim: &MotionLimits, sp: &SafetyParams) -> Option<CubicTrajectory> {
        self.min_exit_time_filtered(probe, lim, sp, None)
    }

    /// As [`Ledgers::min_exit_time`], seeing only the committed traversals
    /// accepted by `visible`.
    pub fn min_exit_time_filtered(
        &self,
        probe: &Probe,
        lim: &MotionLimits,
        sp: &SafetyParams,
        visible: Option<&dyn Fn(&Traversal) -> bool>,
    ) -> Option<CubicTrajectory> {
        let w = exit_window(probe.t0, probe.v0, probe.segment.seg_len, lim)?;
        let rel = self.gather(probe, w.t_over, visible);
        let mut k = 0u64;
        loop {
            let tf = w.t_under + k as f64 * sp.dt;
            if tf > w.t_over {
                return None;
            }
            k += 1;
            if !w.contains(tf) {
                continue;
            }
            let Ok(cand) = solve_coefficients(probe.t0, tf, probe.v0, probe.segment.seg_len) else {
                continue;
            };
            if cand.limits_respected(lim) && Self::verdict(probe, &cand, &rel, sp) == Verdict::Safe {
                return Some(cand);
            }
        }
    }

    /// Records `traj` for `probe` after re-checking it against the ledgers.
    pub fn commit(
        &mut self,
        probe: &Probe,
        traj: CubicTrajectory,
        lim: &MotionLimits,
        sp: &SafetyParams,
    ) -> Result<TraversalId, CoordError> {
        if (traj.t0() - probe.t0).abs() > 1e-12 {
            return Err(CoordError::Mismatch("entry time"));
        }
        if (traj.entry_speed() - probe.v0).abs() > 1e-9 {
            return Err(CoordError::Mismatch("entry speed"));
        }
        if (traj.seg_len() - probe.segment.seg_len).abs() > 1e-9 {
            return Err(CoordError::Mismatch("segment length"));
        }
        if !traj.limits_respected(lim) {
            return Err(CoordError::Mismatch("motion limits"));
        }
        let prev_id = match &probe.prev {
            None => None,
            Some(p) => {
                let id = p.id.ok_or(CoordError::Mismatch("previous piece is not committed"))?;
                let t = self.traversals.get(id.0 as usize).ok_or(CoordError::BadPrevious(id))?;
                if t.vehicle != probe.vehicle || t.next.is_some() || t.traj != p.traj {
                    return Err(CoordError::BadPrevious(id));
                }
                Some(id)
            }
        };
        let rel = self.gather(probe, traj.tf(), None);
        let unsafe_err =
            |other: u32, what| CoordError::Unsafe { vehicle: probe.vehicle, edge: probe.segment.edge, other, what };
        match Self::verdict(probe, &traj, &rel, sp) {
            Verdict::Safe => {}
            Verdict::RearEnd(v) => return Err(unsafe_err(v, "rear-end gap")),
            Verdict::Lateral(v) => return Err(unsafe_err(v, "conflict-point gap")),
        }

        let id = TraversalId(self.traversals.len() as u32);
        self.traversals.push(Traversal { vehicle: probe.vehicle, segment: probe.segment, traj, prev: prev_id, next: None });
        let key = (traj.t0(), probe.vehicle, id);
        let lane = &mut self.lanes[probe.segment.edge.index()];
        insert_sorted(&mut lane.entries, key);
        lane.max_span = lane.max_span.max(traj.duration());
        if let Some(h) = probe.segment.head {
            let al = &mut self.lanes[h.inlet.index()];
            insert_sorted(&mut al.approach_entries, key);
            al.approach_span = al.approach_span.max(traj.duration());
        }
        if let Some(cr) = probe.segment.crossing {
            let co = &mut self.coordinators[cr.intersection.index()];
            insert_sorted(&mut co.entries, key);
            co.max_span = co.max_span.max(traj.duration());
        }
        if let Some(p) = prev_id {
            self.traversals[p.0 as usize].next = Some(id);
            let pt = self.traversals[p.0 as usize];
            let span = traj.tf() - pt.traj.t0();
            let pl = &mut self.lanes[pt.segment.edge.index()];
            pl.max_span = pl.max_span.max(span);
            if let Some(h) = pt.segment.head {
                let al = &mut self.lanes[h.inlet.index()];
                al.approach_span = al.approach_span.max(span);
            }
            if let Some(cr) = pt.segment.crossing {
                let co = &mut self.coordinators[cr.intersection.index()];
                co.max_span = co.max_span.max(span);
            }
        }
        self.last_of_vehicle.insert(probe.vehicle, id);
        Ok(id)
    }

    /// Exhaustive analytic re-check of every committed pair. Returns the
    /// offending pairs.
    pub fn violations(&self, sp: &SafetyParams) -> Vec<(TraversalId, TraversalId, &'static str)> {
        let mut out = Vec::new();
        let check_frame = |frame: Frame, ids: &[TraversalId], out: &mut Vec<_>| {
            for (i, &a) in ids.iter().enumerate() {
                for &b in &ids[i + 1..] {
                    let (ta, tb) = (self.traversal(a), self.traversal(b));
                    if ta.vehicle == tb.vehicle {
                        continue;
                    }
                    if !pair_ok(&self.track_of(frame, a), &self.track_of(frame, b), sp) {
                        out.push((a, b, "rear-end"));
                    }
                }
            }
        };
        for lane in &self.lanes {
            let ids: Vec<TraversalId> = lane.ids().collect();
            check_frame(Frame::Road, &ids, &mut out);
            let ids: Vec<TraversalId> = lane.approach_ids().collect();
            check_frame(Frame::Approach, &ids, &mut out);
        }
        for co in &self.coordinators {
            let ids: Vec<TraversalId> = co.ids().collect();
            for (i, &a) in ids.iter().enumerate() {
                for &b in &ids[i + 1..] {
                    let (ta, tb) = (self.traversal(a), self.traversal(b));
                    let (ca, cb) = (ta.segment.crossing.unwrap(), tb.segment.crossing.unwrap());
                    if ta.vehicle == tb.vehicle || ca.path == cb.path {
                        continue;
                    }
                    for (pa, pb) in co.geometry.conflicts_between(ca.path, cb.path) {
                        let (m1, m2) = lateral_margins(&ta.traj, ca.approach + pa, &tb.traj, cb.approach + pb, sp);
                        if m1.min(m2) > SAFETY_TOL {
                            out.push((a, b, "lateral"));
                        }
                    }
                }
            }
        }
        out
    }

    /// Per-intersection listing of committed trajectories.
    pub fn dump(&self) -> Vec<CoordinatorDump> {
        self.coordinators
            .iter()
            .map(|co| CoordinatorDump {
                intersection: co.intersection.0,
                committed: co
                    .ids()
                    .map(|id| {
                        let t = self.traversal(id);
                        let [a, b, c, d] = t.traj.coefficients();
                        DumpRow {
                            vehicle: t.vehicle,
                            path: t.segment.path().unwrap().0,
                            a,
                            b,
                            c,
                            d,
                            t0: t.traj.t0(),
                            tf: t.traj.tf(),
                        }
                    })
                    .collect(),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoordinatorDump {
    pub intersection: u32,
    pub committed: Vec<DumpRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DumpRow {
    pub vehicle: u32,
    pub path: u8,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub t0: f64,
    pub tf: f64,
}
