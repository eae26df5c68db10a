//! Unconstrained energy-optimal motion of a double integrator over one path
//! segment.
//!
//! Every trajectory is a cubic in time whose control input decays linearly to
//! zero at the exit time:
//!
//! ```text
//! u(t) = 6a t + 2b,  v(t) = 3a t^2 + 2b t + c,  p(t) = a t^3 + b t^2 + c t + d
//! ```
//!
//! with boundary conditions `p(t0) = 0`, `v(t0) = v0`, `p(tf) = pf`,
//! `u(tf) = 0`. Coefficients are stored relative to the entry time `t0`, which
//! keeps evaluation well conditioned when `t0` is hours into a simulation; the
//! absolute-time `(a, b, c, d)` are available through
//! [`CubicTrajectory::coefficients`].
//!
//! Units: seconds, meters, m/s, m/s².

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::Cubic;

/// Slack allowed when comparing a speed or control value against its limit.
pub const LIMIT_TOL: f64 = 1e-9;

/// Slack on the trajectory's time window when evaluating at its endpoints.
const WINDOW_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("exit time {tf} must be later than entry time {t0}")]
    EmptyWindow { t0: f64, tf: f64 },
    #[error("entry speed must be positive, got {0}")]
    NonPositiveSpeed(f64),
    #[error("segment length must be positive, got {0}")]
    NonPositiveLength(f64),
    #[error("trajectory would stop or reverse (exit speed {0})")]
    NotMonotone(f64),
    #[error("time {t} outside trajectory window [{t0}, {tf}]")]
    OutsideWindow { t: f64, t0: f64, tf: f64 },
    #[error("position {p} outside segment [0, {len}]")]
    OutsideSegment { p: f64, len: f64 },
    #[error("invalid motion limits: {0}")]
    InvalidLimits(String),
}

/// Control and speed bounds shared by every vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionLimits {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl MotionLimits {
    pub fn new(u_min: f64, u_max: f64, v_min: f64, v_max: f64) -> Result<Self, MotionError> {
        let lim = MotionLimits { u_min, u_max, v_min, v_max };
        lim.validate()?;
        Ok(lim)
    }

    pub fn validate(&self) -> Result<(), MotionError> {
        let all = [self.u_min, self.u_max, self.v_min, self.v_max];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(MotionError::NonFinite("motion limits"));
        }
        if !(self.u_min < 0.0 && 0.0 < self.u_max) {
            return Err(MotionError::InvalidLimits(format!(
                "need u_min < 0 < u_max, got [{}, {}]",
                self.u_min, self.u_max
            )));
        }
        if !(0.0 < self.v_min && self.v_min < self.v_max) {
            return Err(MotionError::InvalidLimits(format!(
                "need 0 < v_min < v_max, got [{}, {}]",
                self.v_min, self.v_max
            )));
        }
        Ok(())
    }

    pub fn speed_ok(&self, v: f64) -> bool {
        v >= self.v_min - LIMIT_TOL && v <= self.v_max + LIMIT_TOL
    }

    pub fn control_ok(&self, u: f64) -> bool {
        u >= self.u_min - LIMIT_TOL && u <= self.u_max + LIMIT_TOL
    }
}

impl Default for MotionLimits {
    fn default() -> Self {
        MotionLimits { u_min: -3.0, u_max: 3.0, v_min: 1.0, v_max: 15.0 }
    }
}

/// Position, speed and control at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionState {
    pub p: f64,
    pub v: f64,
    pub u: f64,
}

/// A cubic position profile over `[t0, tf]` on a segment of length `seg_len`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubicTrajectory {
    t0: f64,
    tf: f64,
    seg_len: f64,
    /// Position as a cubic in `s = t - t0`.
    local: Cubic,
}

/// Solves the four boundary conditions for the unique cubic.
///
/// With `T = tf - t0` and the control written as `u = k (T - s)`, the
/// remaining conditions reduce to `v0 T + k T^3 / 3 = pf`, so
/// `k = 3 (pf - v0 T) / T^3`.
pub fn solve_coefficients(
    t0: f64,
    tf: f64,
    v0: f64,
    pf: f64,
) -> Result<CubicTrajectory, MotionError> {
    if !t0.is_finite() || !tf.is_finite() {
        return Err(MotionError::NonFinite("time"));
    }
    if !v0.is_finite() {
        return Err(MotionError::NonFinite("entry speed"));
    }
    if !pf.is_finite() {
        return Err(MotionError::NonFinite("segment length"));
    }
    if tf <= t0 {
        return Err(MotionError::EmptyWindow { t0, tf });
    }
    if v0 <= 0.0 {
        return Err(MotionError::NonPositiveSpeed(v0));
    }
    if pf <= 0.0 {
        return Err(MotionError::NonPositiveLength(pf));
    }
    let big_t = tf - t0;
    let k = 3.0 * (pf - v0 * big_t) / (big_t * big_t * big_t);
    let local = Cubic([0.0, v0, 0.5 * k * big_t, -k / 6.0]);
    let traj = CubicTrajectory { t0, tf, seg_len: pf, local };
    // Speed is monotone in s (its derivative k (T - s) keeps one sign), so the
    // exit speed is the only place it can reach zero.
    let v_exit = traj.exit_speed();
    if v_exit <= 0.0 {
        return Err(MotionError::NotMonotone(v_exit));
    }
    Ok(traj)
}

impl CubicTrajectory {
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tf(&self) -> f64 {
        self.tf
    }

    pub fn seg_len(&self) -> f64 {
        self.seg_len
    }

    pub fn duration(&self) -> f64 {
        self.tf - self.t0
    }

    /// Absolute-time coefficients `(a, b, c, d)` of
    /// `p(t) = a t^3 + b t^2 + c t + d`.
    pub fn coefficients(&self) -> [f64; 4] {
        let [_, c1, c2, c3] = self.local.0;
        let t0 = self.t0;
        let a = c3;
        let b = c2 - 3.0 * c3 * t0;
        let c = c1 - 2.0 * c2 * t0 + 3.0 * c3 * t0 * t0;
        let d = -c1 * t0 + c2 * t0 * t0 - c3 * t0 * t0 * t0;
        [a, b, c, d]
    }

    /// Position polynomial in `s = t - t0`.
    pub fn local(&self) -> &Cubic {
        &self.local
    }

    /// Polynomial evaluation at any `t`; outside the window this extrapolates.
    #[inline]
    pub fn position(&self, t: f64) -> f64 {
        self.local.eval(t - self.t0)
    }

    #[inline]
    pub fn speed(&self, t: f64) -> f64 {
        self.local.deriv(t - self.t0)
    }

    #[inline]
    pub fn control(&self, t: f64) -> f64 {
        self.local.second_deriv(t - self.t0)
    }

    pub fn entry_speed(&self) -> f64 {
        self.local.0[1]
    }

    pub fn exit_speed(&self) -> f64 {
        self.speed(self.tf)
    }

    pub fn contains_time(&self, t: f64) -> bool {
        t >= self.t0 - WINDOW_TOL && t <= self.tf + WINDOW_TOL
    }

    pub fn eval(&self, t: f64) -> Result<MotionState, MotionError> {
        if !self.contains_time(t) {
            return Err(MotionError::OutsideWindow { t, t0: self.t0, tf: self.tf });
        }
        Ok(MotionState { p: self.position(t), v: self.speed(t), u: self.control(t) })
    }

    /// Position re-expanded as a cubic in `s = t - t_ref`.
    pub fn taylor_at(&self, t_ref: f64) -> Cubic {
        let s = t_ref - self.t0;
        let c3 = self.local.0[3];
        Cubic([
            self.local.eval(s),
            self.local.deriv(s),
            0.5 * self.local.second_deriv(s),
            c3,
        ])
    }

    /// Checks control and speed limits over the whole window.
    ///
    /// Control is affine in time, so its endpoints bound it. Speed is
    /// quadratic, so the endpoints plus the vertex `t* = -b / (3a)` (when it
    /// falls inside the window) bound it.
    pub fn limits_respected(&self, lim: &MotionLimits) -> bool {
        let big_t = self.duration();
        if !lim.control_ok(self.local.second_deriv(0.0))
            || !lim.control_ok(self.local.second_deriv(big_t))
        {
            return false;
        }
        if !lim.speed_ok(self.local.deriv(0.0)) || !lim.speed_ok(self.local.deriv(big_t)) {
            return false;
        }
        let [_, _, c2, c3] = self.local.0;
        if c3 != 0.0 {
            let s_star = -c2 / (3.0 * c3);
            if s_star > 0.0 && s_star < big_t && !lim.speed_ok(self.local.deriv(s_star)) {
                return false;
            }
        }
        true
    }

    /// The time at which the vehicle reaches arc-length `p_query`.
    ///
    /// Safeguarded Newton iteration inside a shrinking bisection bracket;
    /// converges to well under a nanometer.
    pub fn invert_position(&self, p_query: f64) -> Result<f64, MotionError> {
        if !p_query.is_finite() {
            return Err(MotionError::NonFinite("position"));
        }
        let len = self.seg_len;
        if p_query < -1e-9 || p_query > len + 1e-9 {
            return Err(MotionError::OutsideSegment { p: p_query, len });
        }
        if p_query <= 0.0 {
            return Ok(self.t0);
        }
        if p_query >= len {
            return Ok(self.tf);
        }
        let big_t = self.duration();
        let tol_p = 1e-12 * len.max(1.0);
        let (mut lo, mut hi) = (0.0_f64, big_t);
        let mut s = big_t * p_query / len;
        for _ in 0..200 {
            let f = self.local.eval(s) - p_query;
            if f.abs() <= tol_p {
                break;
            }
            if f < 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            if hi - lo <= 1e-15 * big_t.max(1.0) {
                break;
            }
            let v = self.local.deriv(s);
            let newton = s - f / v;
            s = if v > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        }
        Ok(self.t0 + s)
    }
}

/// The interval of exit times reachable with an unconstrained cubic.
///
/// The reachable set can have an interior hole when a strong deceleration is
/// needed for intermediate horizons; `hole` records it so callers can skip it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExitWindow {
    pub t_under: f64,
    pub t_over: f64,
    pub hole: Option<(f64, f64)>,
}

impl ExitWindow {
    pub fn contains(&self, tf: f64) -> bool {
        if tf < self.t_under || tf > self.t_over {
            return false;
        }
        match self.hole {
            Some((a, b)) => !(tf > a && tf < b),
            None => true,
        }
    }
}

/// Earliest and latest feasible exit times for entry `(t0, v0)` on a segment
/// of length `pf`; `None` when no exit time works.
///
/// With horizon `T`, the exit speed is `3 pf / (2T) - v0 / 2` and the entry
/// control is `3 (pf - v0 T) / T^2`; speed is monotone and control is affine,
/// so those two values against the limits decide feasibility:
///
/// - exit speed `<= v_max`  iff `T >= 3 pf / (2 v_max + v0)`
/// - exit speed `>= v_min`  iff `T <= 3 pf / (2 v_min + v0)`
/// - entry control `<= u_max` iff `u_max T^2 + 3 v0 T - 3 pf >= 0`
/// - entry control `>= u_min` iff `|u_min| T^2 - 3 v0 T + 3 pf >= 0`, which
///   fails only strictly between the two roots when they are real.
pub fn exit_window(t0: f64, v0: f64, pf: f64, lim: &MotionLimits) -> Option<ExitWindow> {
    if !lim.speed_ok(v0) || pf <= 0.0 || !t0.is_finite() || !pf.is_finite() {
        return None;
    }
    let t_vmax = 3.0 * pf / (2.0 * lim.v_max + v0);
    let t_vmin = 3.0 * pf / (2.0 * lim.v_min + v0);
    let t_umax = 6.0 * pf / (3.0 * v0 + (9.0 * v0 * v0 + 12.0 * lim.u_max * pf).sqrt());
    let lo = t_vmax.max(t_umax);
    let hi = t_vmin;
    if lo > hi {
        return None;
    }
    let brake = -lim.u_min;
    let disc = 9.0 * v0 * v0 - 12.0 * brake * pf;
    let band = if disc > 0.0 {
        let sq = disc.sqrt();
        Some((6.0 * pf / (3.0 * v0 + sq), (3.0 * v0 + sq) / (2.0 * brake)))
    } else {
        None
    };
    let (under, over, hole) = match band {
        None => (lo, hi, None),
        Some((r1, r2)) => {
            let under = if lo <= r1 || lo >= r2 {
                lo
            } else if r2 <= hi {
                r2
            } else {
                return None;
            };
            let over = if hi <= r1 || hi >= r2 {
                hi
            } else if r1 >= lo {
                r1
            } else {
                return None;
            };
            let hole = (under < r1 && over > r2).then_some((t0 + r1, t0 + r2));
            (under, over, hole)
        }
    };
    Some(ExitWindow { t_under: t0 + under, t_over: t0 + over, hole })
}
