//! Canonical four-way intersection cell: twelve lane-center paths and the
//! points where they cross.
//!
//! The cell is a square of side `cell_side` centered at the origin with north
//! along +y. Traffic keeps right, so an inbound lane sits `lane_width / 2` to
//! the right of its heading. Straight paths are chords through the cell;
//! turns are quarter circles centered on the cell corner between the two arms,
//! approximated by [`ARC_SEGMENTS`] chords.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const ARC_SEGMENTS: usize = 32;

/// Positions closer than this to a path end are merges or diverges, not
/// crossings.
const END_EPS: f64 = 1e-6;

/// One approach of the intersection, clockwise from north.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arm {
    North = 0,
    East = 1,
    South = 2,
    West = 3,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::North, Arm::East, Arm::South, Arm::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Arm {
        Arm::ALL[i % 4]
    }

    pub fn opposite(self) -> Arm {
        Arm::from_index(self.index() + 2)
    }

    /// Unit vector pointing from the cell center out along this arm.
    pub fn direction(self) -> [f64; 2] {
        match self {
            Arm::North => [0.0, 1.0],
            Arm::East => [1.0, 0.0],
            Arm::South => [0.0, -1.0],
            Arm::West => [-1.0, 0.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Turn {
    Left,
    Straight,
    Right,
}

/// Index of a path inside one intersection, `0..12`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PathId(pub u8);

impl PathId {
    /// Paths are numbered `inlet * 3 + slot` with slot 0 = left, 1 = straight,
    /// 2 = right. `None` for U-turns.
    pub fn from_arms(inlet: Arm, outlet: Arm) -> Option<PathId> {
        let rel = (outlet.index() + 4 - inlet.index()) % 4;
        (rel != 0).then(|| PathId((inlet.index() * 3 + rel - 1) as u8))
    }

    pub fn inlet(self) -> Arm {
        Arm::from_index(self.0 as usize / 3)
    }

    pub fn outlet(self) -> Arm {
        Arm::from_index(self.0 as usize / 3 + self.0 as usize % 3 + 1)
    }

    pub fn turn(self) -> Turn {
        match self.0 % 3 {
            0 => Turn::Left,
            1 => Turn::Straight,
            _ => Turn::Right,
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}->{:?}", self.inlet(), self.outlet())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionPath {
    pub id: PathId,
    pub inlet: Arm,
    pub outlet: Arm,
    pub turn: Turn,
    pub length: f64,
    pub polyline: Vec<[f64; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictPoint {
    pub id: usize,
    pub path_a: PathId,
    pub path_b: PathId,
    /// Arc length along `path_a`.
    pub pos_a: f64,
    /// Arc length along `path_b`.
    pub pos_b: f64,
}

impl ConflictPoint {
    /// Position of the point along `path`, if the point lies on it.
    pub fn position_on(&self, path: PathId) -> Option<f64> {
        if path == self.path_a {
            Some(self.pos_a)
        } else if path == self.path_b {
            Some(self.pos_b)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntersectionGeometry {
    pub lane_width: f64,
    pub cell_side: f64,
    pub paths: Vec<IntersectionPath>,
    pub conflicts: Vec<ConflictPoint>,
    /// `table[a][b]` lists conflict indices between paths `a` and `b`.
    table: Vec<Vec<Vec<usize>>>,
}

impl IntersectionGeometry {
    /// Assembles geometry from stored paths and conflicts, rebuilding the
    /// lookup table.
    pub fn from_parts(
        lane_width: f64,
        cell_side: f64,
        paths: Vec<IntersectionPath>,
        conflicts: Vec<ConflictPoint>,
    ) -> Self {
        let mut table = vec![vec![Vec::new(); 12]; 12];
        for (i, c) in conflicts.iter().enumerate() {
            table[c.path_a.index()][c.path_b.index()].push(i);
            table[c.path_b.index()][c.path_a.index()].push(i);
        }
        IntersectionGeometry { lane_width, cell_side, paths, conflicts, table }
    }

    pub fn path(&self, id: PathId) -> &IntersectionPath {
        &self.paths[id.index()]
    }

    /// Conflict points shared by two paths, as `(position on a, position on b)`.
    pub fn conflicts_between(&self, a: PathId, b: PathId) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.table[a.index()][b.index()].iter().map(move |&i| {
            let c = &self.conflicts[i];
            if c.path_a == a {
                (c.pos_a, c.pos_b)
            } else {
                (c.pos_b, c.pos_a)
            }
        })
    }

    pub fn has_conflict(&self, a: PathId, b: PathId) -> bool {
        !self.table[a.index()][b.index()].is_empty()
    }
}

fn right_of(h: [f64; 2]) -> [f64; 2] {
    [h[1], -h[0]]
}

fn add(a: [f64; 2], b: [f64; 2], k: f64) -> [f64; 2] {
    [a[0] + k * b[0], a[1] + k * b[1]]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Where an inbound lane on `arm` crosses the cell boundary.
pub fn entry_point(arm: Arm, lane_width: f64, cell_side: f64) -> [f64; 2] {
    let d = arm.direction();
    let heading = [-d[0], -d[1]];
    add(add([0.0, 0.0], d, 0.5 * cell_side), right_of(heading), 0.5 * lane_width)
}

/// Where an outbound lane on `arm` crosses the cell boundary.
pub fn exit_point(arm: Arm, lane_width: f64, cell_side: f64) -> [f64; 2] {
    let d = arm.direction();
    add(add([0.0, 0.0], d, 0.5 * cell_side), right_of(d), 0.5 * lane_width)
}

fn path_polyline(id: PathId, lane_width: f64, cell_side: f64) -> Vec<[f64; 2]> {
    let (inlet, outlet) = (id.inlet(), id.outlet());
    let start = entry_point(inlet, lane_width, cell_side);
    let end = exit_point(outlet, lane_width, cell_side);
    match id.turn() {
        Turn::Straight => vec![start, end],
        Turn::Left | Turn::Right => {
            let center = add(
                add([0.0, 0.0], inlet.direction(), 0.5 * cell_side),
                outlet.direction(),
                0.5 * cell_side,
            );
            let radius = dist(center, start);
            let a0 = (start[1] - center[1]).atan2(start[0] - center[0]);
            let a1 = (end[1] - center[1]).atan2(end[0] - center[0]);
            let mut sweep = a1 - a0;
            while sweep > std::f64::consts::PI {
                sweep -= 2.0 * std::f64::consts::PI;
            }
            while sweep < -std::f64::consts::PI {
                sweep += 2.0 * std::f64::consts::PI;
            }
            let mut pts = Vec::with_capacity(ARC_SEGMENTS + 1);
            pts.push(start);
            for i in 1..ARC_SEGMENTS {
                let a = a0 + sweep * i as f64 / ARC_SEGMENTS as f64;
                pts.push([center[0] + radius * a.cos(), center[1] + radius * a.sin()]);
            }
            pts.push(end);
            pts
        }
    }
}

pub fn polyline_length(pts: &[[f64; 2]]) -> f64 {
    pts.windows(2).map(|w| dist(w[0], w[1])).sum()
}

/// Proper intersection of segments `p0-p1` and `q0-q1` as parameters
/// `(s, t)` in `[0, 1]`; parallel segments never intersect here.
fn segment_intersection(p0: [f64; 2], p1: [f64; 2], q0: [f64; 2], q1: [f64; 2]) -> Option<(f64, f64)> {
    let r = [p1[0] - p0[0], p1[1] - p0[1]];
    let s = [q1[0] - q0[0], q1[1] - q0[1]];
    let denom = r[0] * s[1] - r[1] * s[0];
    if denom.abs() < 1e-12 {
        return None;
    }
    let qp = [q0[0] - p0[0], q0[1] - p0[1]];
    let t_p = (qp[0] * s[1] - qp[1] * s[0]) / denom;
    let t_q = (qp[0] * r[1] - qp[1] * r[0]) / denom;
    let eps = 1e-12;
    ((-eps..=1.0 + eps).contains(&t_p) && (-eps..=1.0 + eps).contains(&t_q)).then_some((t_p, t_q))
}

/// Every point where two polylines cross, as arc-length pairs, excluding
/// points at either polyline's ends.
pub fn polyline_crossings(a: &[[f64; 2]], b: &[[f64; 2]]) -> Vec<(f64, f64)> {
    let len_a = polyline_length(a);
    let len_b = polyline_length(b);
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut acc_a = 0.0;
    for wa in a.windows(2) {
        let seg_a = dist(wa[0], wa[1]);
        let mut acc_b = 0.0;
        for wb in b.windows(2) {
            let seg_b = dist(wb[0], wb[1]);
            if let Some((s, t)) = segment_intersection(wa[0], wa[1], wb[0], wb[1]) {
                let pa = acc_a + s.clamp(0.0, 1.0) * seg_a;
                let pb = acc_b + t.clamp(0.0, 1.0) * seg_b;
                let interior = pa > END_EPS && pa < len_a - END_EPS && pb > END_EPS && pb < len_b - END_EPS;
                let dup = out.iter().any(|&(x, y)| (x - pa).abs() < 1e-6 && (y - pb).abs() < 1e-6);
                if interior && !dup {
                    out.push((pa, pb));
                }
            }
            acc_b += seg_b;
        }
        acc_a += seg_a;
    }
    out
}

/// Builds the twelve paths of the canonical cell and all their crossings.
///
/// Requires `lane_width > 0` and `cell_side > 2 * lane_width`.
pub fn build_intersection_geometry(lane_width: f64, cell_side: f64) -> IntersectionGeometry {
    assert!(lane_width > 0.0 && cell_side > 2.0 * lane_width, "invalid intersection dimensions");
    let mut paths = Vec::with_capacity(12);
    for k in 0..12u8 {
        let id = PathId(k);
        let polyline = path_polyline(id, lane_width, cell_side);
        paths.push(IntersectionPath {
            id,
            inlet: id.inlet(),
            outlet: id.outlet(),
            turn: id.turn(),
            length: polyline_length(&polyline),
            polyline,
        });
    }
    let mut conflicts = Vec::new();
    for a in 0..12 {
        for b in (a + 1)..12 {
            for (pa, pb) in polyline_crossings(&paths[a].polyline, &paths[b].polyline) {
                conflicts.push(ConflictPoint {
                    id: conflicts.len(),
                    path_a: PathId(a as u8),
                    path_b: PathId(b as u8),
                    pos_a: pa,
                    pos_b: pb,
                });
            }
        }
    }
    IntersectionGeometry::from_parts(lane_width, cell_side, paths, conflicts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_ids_cover_all_non_u_turn_pairs() {
        let mut seen = [false; 12];
        for i in Arm::ALL {
            for o in Arm::ALL {
                match PathId::from_arms(i, o) {
                    None => assert_eq!(i, o),
                    Some(p) => {
                        assert_eq!((p.inlet(), p.outlet()), (i, o));
                        assert!(!seen[p.index()]);
                        seen[p.index()] = true;
                    }
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
        let from_south = |o| PathId::from_arms(Arm::South, o).unwrap().turn();
        assert_eq!(from_south(Arm::North), Turn::Straight);
        assert_eq!(from_south(Arm::East), Turn::Right);
        assert_eq!(from_south(Arm::West), Turn::Left);
    }

    #[test]
    fn twelve_paths_with_expected_lengths() {
        let g = build_intersection_geometry(3.5, 30.0);
        assert_eq!(g.paths.len(), 12);
        for p in &g.paths {
            let want = match p.turn {
                Turn::Straight => 30.0,
                // Chord approximation of a quarter circle slightly undershoots.
                Turn::Right => std::f64::consts::FRAC_PI_2 * 13.25,
                Turn::Left => std::f64::consts::FRAC_PI_2 * 16.75,
            };
            assert!(p.length <= want + 1e-9 && want - p.length < 0.02 * want, "{p:?}");
        }
    }

    #[test]
    fn perpendicular_straights_cross_once_near_center() {
        let g = build_intersection_geometry(3.5, 30.0);
        let sn = PathId::from_arms(Arm::South, Arm::North).unwrap();
        let we = PathId::from_arms(Arm::West, Arm::East).unwrap();
        let pts: Vec<_> = g.conflicts_between(sn, we).collect();
        assert_eq!(pts.len(), 1);
        // South-to-north runs along x = +1.75 from y = -15; west-to-east runs
        // along y = -1.75 from x = -15.
        assert!((pts[0].0 - 13.25).abs() < 1e-9);
        assert!((pts[0].1 - 16.75).abs() < 1e-9);
    }

    #[test]
    fn conflicts_are_symmetric_and_interior() {
        let g = build_intersection_geometry(3.5, 30.0);
        for c in &g.conflicts {
            assert!(c.pos_a > 0.0 && c.pos_a < g.path(c.path_a).length);
            assert!(c.pos_b > 0.0 && c.pos_b < g.path(c.path_b).length);
            let fwd: Vec<_> = g.conflicts_between(c.path_a, c.path_b).collect();
            let back: Vec<_> = g.conflicts_between(c.path_b, c.path_a).collect();
            assert_eq!(fwd.len(), back.len());
            for (f, b) in fwd.iter().zip(back.iter()) {
                assert_eq!((f.0, f.1), (b.1, b.0));
            }
        }
    }

    #[test]
    fn right_turns_never_cross() {
        let g = build_intersection_geometry(3.5, 30.0);
        for p in g.paths.iter().filter(|p| p.turn == Turn::Right) {
            for q in &g.paths {
                assert!(!g.has_conflict(p.id, q.id), "{} vs {}", p.id, q.id);
            }
        }
    }

    #[test]
    fn sixteen_crossings_in_canonical_cell() {
        let g = build_intersection_geometry(3.5, 30.0);
        assert_eq!(g.conflicts.len(), 16);
    }

    /// Resamples both polylines at 1 cm and looks for sign changes of the
    /// crossing test between consecutive samples.
    fn brute_force_crossings(a: &[[f64; 2]], b: &[[f64; 2]]) -> Vec<(f64, f64)> {
        fn resample(pts: &[[f64; 2]], step: f64) -> Vec<([f64; 2], f64)> {
            let mut out = vec![(pts[0], 0.0)];
            let mut acc = 0.0;
            for w in pts.windows(2) {
                let l = dist(w[0], w[1]);
                let n = (l / step).ceil() as usize;
                for i in 1..=n {
                    let f = i as f64 / n as f64;
                    out.push(([w[0][0] + f * (w[1][0] - w[0][0]), w[0][1] + f * (w[1][1] - w[0][1])], acc + f * l));
                }
                acc += l;
            }
            out
        }
        fn orient(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
            (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
        }
        let ra = resample(a, 0.01);
        let rb = resample(b, 0.01);
        let la = ra.last().unwrap().1;
        let lb = rb.last().unwrap().1;
        let mut hits: Vec<(f64, f64)> = Vec::new();
        for wa in ra.windows(2) {
            for wb in rb.windows(2) {
                // Cheap bounding-box reject.
                if wa[0].0[0].max(wa[1].0[0]) < wb[0].0[0].min(wb[1].0[0]) - 1e-9
                    || wb[0].0[0].max(wb[1].0[0]) < wa[0].0[0].min(wa[1].0[0]) - 1e-9
                    || wa[0].0[1].max(wa[1].0[1]) < wb[0].0[1].min(wb[1].0[1]) - 1e-9
                    || wb[0].0[1].max(wb[1].0[1]) < wa[0].0[1].min(wa[1].0[1]) - 1e-9
                {
                    continue;
                }
                let d1 = orient(wb[0].0, wb[1].0, wa[0].0);
                let d2 = orient(wb[0].0, wb[1].0, wa[1].0);
                let d3 = orient(wa[0].0, wa[1].0, wb[0].0);
                let d4 = orient(wa[0].0, wa[1].0, wb[1].0);
                if d1 * d2 <= 0.0 && d3 * d4 <= 0.0 {
                    let pa = wa[0].1;
                    let pb = wb[0].1;
                    if pa > 0.02 && pa < la - 0.02 && pb > 0.02 && pb < lb - 0.02
                        && !hits.iter().any(|h| (h.0 - pa).abs() < 0.05 && (h.1 - pb).abs() < 0.05)
                    {
                        hits.push((pa, pb));
                    }
                }
            }
        }
        hits
    }

    #[test]
    fn conflict_table_matches_brute_force() {
        let g = build_intersection_geometry(3.5, 30.0);
        let mut total = 0;
        for a in 0..12u8 {
            for b in (a + 1)..12u8 {
                let (pa, pb) = (PathId(a), PathId(b));
                let brute = brute_force_crossings(&g.path(pa).polyline, &g.path(pb).polyline);
                let exact: Vec<_> = g.conflicts_between(pa, pb).collect();
                assert_eq!(brute.len(), exact.len(), "{pa} vs {pb}");
                for e in &exact {
                    assert!(
                        brute.iter().any(|h| (h.0 - e.0).abs() < 0.02 && (h.1 - e.1).abs() < 0.02),
                        "{pa} vs {pb}: {e:?} not in {brute:?}"
                    );
                }
                total += exact.len();
            }
        }
        assert_eq!(total, g.conflicts.len());
    }
}
