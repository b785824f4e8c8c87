//! Maneuver plans and the map from plans to bicycle inputs.
//!
//! A plan fixes a lateral quintic (smooth move to a lane center with
//! zero terminal velocity and acceleration) plus a longitudinal speed
//! profile. The kinematic bicycle is differentially flat in its
//! position outputs, so a planned velocity/acceleration pair converts
//! exactly into `(tan_delta, accel)`:
//!
//! ```text
//! accel     = (v . a) / |v|
//! tan_delta = L (v_x a_y - v_y a_x) / |v|^3
//! ```
//!
//! Plans are sampled open loop at elapsed time `tau`. Sampling at
//! `tau = 0` would be useless — the quintic starts with zero
//! acceleration by construction — so callers step `tau` from one tick
//! onward and replan at decision boundaries rather than every tick.
//! Past its duration a plan holds the target: centered, flat, and at
//! the profile speed.

use libm::{exp, floor, sin, sqrt};

use crate::dynamics::{ControlInput, InputBox, VehicleState};

/// Ring road cross-section: `lane_count` lanes of `lane_width` each,
/// lane `i` spanning `[i w, (i+1) w)` with center `(i + 1/2) w`.
/// Left means increasing `y` and increasing lane index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneGeometry {
    pub lane_width: f64,
    pub lane_count: usize,
    pub road_length: f64,
}

impl LaneGeometry {
    pub fn lane_of(&self, p_y: f64) -> usize {
        let raw = floor(p_y / self.lane_width) as i64;
        raw.clamp(0, self.lane_count as i64 - 1) as usize
    }

    pub fn center(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width
    }

    pub fn width_total(&self) -> f64 {
        self.lane_width * self.lane_count as f64
    }
}

/// The discrete action set, in fixed index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    KeepLane,
    ChangeLeft,
    ChangeRight,
}

pub const ACTION_COUNT: usize = 3;

impl Action {
    pub const ALL: [Action; ACTION_COUNT] =
        [Action::KeepLane, Action::ChangeLeft, Action::ChangeRight];

    pub fn index(self) -> usize {
        match self {
            Action::KeepLane => 0,
            Action::ChangeLeft => 1,
            Action::ChangeRight => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn is_lane_change(self) -> bool {
        !matches!(self, Action::KeepLane)
    }

    /// Target lane for this action from `lane`, if it exists.
    pub fn target_lane(self, lane: usize, lane_count: usize) -> Option<usize> {
        match self {
            Action::KeepLane => Some(lane),
            Action::ChangeLeft => (lane + 1 < lane_count).then_some(lane + 1),
            Action::ChangeRight => lane.checked_sub(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerParams {
    /// Cruise speed the keep-lane profile relaxes toward.
    pub desired_speed: f64,
    /// Exponential rate of that relaxation, per second.
    pub speed_gain: f64,
    pub lane_change_duration: f64,
    /// Horizon of the keep-lane recentering quintic.
    pub recenter_duration: f64,
    /// Below this planned speed the flatness inverse is ill-conditioned
    /// and callers fall back to [`brake_hold`].
    pub v_eps: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            desired_speed: 30.0,
            speed_gain: 0.5,
            lane_change_duration: 4.0,
            recenter_duration: 1.0,
            v_eps: 0.1,
        }
    }
}

/// Quintic `y(t)` with `y(0) = y0`, `y'(0) = v0`, `y''(0) = 0`, settling
/// at `y(T) = y1` with zero velocity and acceleration. Beyond `T` it
/// holds `y1` flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quintic {
    c: [f64; 6],
    pub duration: f64,
}

impl Quintic {
    pub fn settling(y0: f64, v0: f64, y1: f64, duration: f64) -> Quintic {
        debug_assert!(duration > 0.0);
        let t = duration;
        let d = y1 - y0;
        Quintic {
            c: [
                y0,
                v0,
                0.0,
                (20.0 * d - 12.0 * v0 * t) / (2.0 * t * t * t),
                (-30.0 * d + 16.0 * v0 * t) / (2.0 * t * t * t * t),
                (12.0 * d - 6.0 * v0 * t) / (2.0 * t * t * t * t * t),
            ],
            duration,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        let t = t.min(self.duration);
        let c = &self.c;
        c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))))
    }

    pub fn d1(&self, t: f64) -> f64 {
        if t >= self.duration {
            return 0.0;
        }
        let c = &self.c;
        c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * (4.0 * c[4] + t * 5.0 * c[5])))
    }

    pub fn d2(&self, t: f64) -> f64 {
        if t >= self.duration {
            return 0.0;
        }
        let c = &self.c;
        2.0 * c[2] + t * (6.0 * c[3] + t * (12.0 * c[4] + t * 20.0 * c[5]))
    }
}

/// Longitudinal speed profile along the road axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LonProfile {
    /// `v(t) = v_des + (v0 - v_des) e^(-gain t)`.
    Approach { v0: f64, v_des: f64, gain: f64 },
    /// Constant speed, used while a lane change is executing.
    Hold { v0: f64 },
}

impl LonProfile {
    pub fn vel(&self, t: f64) -> f64 {
        match *self {
            LonProfile::Approach { v0, v_des, gain } => v_des + (v0 - v_des) * exp(-gain * t),
            LonProfile::Hold { v0 } => v0,
        }
    }

    pub fn acc(&self, t: f64) -> f64 {
        match *self {
            LonProfile::Approach { v0, v_des, gain } => gain * (v_des - v0) * exp(-gain * t),
            LonProfile::Hold { .. } => 0.0,
        }
    }
}

/// Velocity and acceleration of a plan at one instant, in road-aligned
/// coordinates (`x` along the road, `y` across it).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanSample {
    pub vel: [f64; 2],
    pub acc: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPlan {
    pub action: Action,
    pub target_lane: usize,
    pub lon: LonProfile,
    pub lat: Quintic,
}

impl TrajectoryPlan {
    pub fn sample(&self, tau: f64) -> PlanSample {
        PlanSample {
            vel: [self.lon.vel(tau), self.lat.d1(tau)],
            acc: [self.lon.acc(tau), self.lat.d2(tau)],
        }
    }

    /// Lateral settling horizon; the profile continues past it.
    pub fn duration(&self) -> f64 {
        self.lat.duration
    }

    pub fn complete(&self, tau: f64) -> bool {
        tau >= self.lat.duration
    }
}

/// Builds the plan realizing `action` from the current state, or `None`
/// when the action leaves the road.
pub fn plan_action(
    action: Action,
    x: &VehicleState,
    geom: &LaneGeometry,
    params: &PlannerParams,
) -> Option<TrajectoryPlan> {
    let lane = geom.lane_of(x.p_y);
    let target_lane = action.target_lane(lane, geom.lane_count)?;
    let lat_v0 = x.v * sin(x.psi);
    let (duration, lon) = match action {
        Action::KeepLane => (
            params.recenter_duration,
            LonProfile::Approach {
                v0: x.v,
                v_des: params.desired_speed,
                gain: params.speed_gain,
            },
        ),
        Action::ChangeLeft | Action::ChangeRight => {
            (params.lane_change_duration, LonProfile::Hold { v0: x.v })
        }
    };
    Some(TrajectoryPlan {
        action,
        target_lane,
        lon,
        lat: Quintic::settling(x.p_y, lat_v0, geom.center(target_lane), duration),
    })
}

/// Flatness inverse: bicycle inputs that realize the sampled velocity
/// and acceleration. `None` when the sampled speed is below `v_eps`.
pub fn feedforward_from_plan(
    sample: &PlanSample,
    wheelbase: f64,
    v_eps: f64,
) -> Option<ControlInput> {
    let [vx, vy] = sample.vel;
    let [ax, ay] = sample.acc;
    let speed = sqrt(vx * vx + vy * vy);
    if speed < v_eps {
        return None;
    }
    Some(ControlInput {
        accel: (vx * ax + vy * ay) / speed,
        tan_delta: wheelbase * (vx * ay - vy * ax) / (speed * speed * speed),
    })
}

/// Strongest stop that cannot drive the speed negative in one tick.
pub fn brake_hold(v: f64, bounds: &InputBox, ts: f64) -> ControlInput {
    ControlInput {
        tan_delta: 0.0,
        accel: (-v / ts).max(bounds.accel_min).min(bounds.accel_max),
    }
}

/// Reference inputs for all three actions at one instant, in action
/// index order. `None` marks actions that leave the road. Entries are
/// clamped into the input box; low-speed samples fall back to
/// [`brake_hold`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceMatrix {
    pub columns: [Option<ControlInput>; ACTION_COUNT],
}

impl ReferenceMatrix {
    pub fn select(&self, action: Action) -> Option<ControlInput> {
        self.columns[action.index()]
    }

    pub fn available(&self, action: Action) -> bool {
        self.columns[action.index()].is_some()
    }
}

/// Fresh plans for every action, each sampled one tick in (`tau = ts`),
/// converted to clamped inputs.
pub fn reference_matrix(
    x: &VehicleState,
    geom: &LaneGeometry,
    params: &PlannerParams,
    bounds: &InputBox,
    wheelbase: f64,
    ts: f64,
) -> ReferenceMatrix {
    let mut columns = [None; ACTION_COUNT];
    for action in Action::ALL {
        let Some(plan) = plan_action(action, x, geom, params) else {
            continue;
        };
        let sample = plan.sample(ts);
        let u = feedforward_from_plan(&sample, wheelbase, params.v_eps)
            .map(|u| bounds.clamp(u))
            .unwrap_or_else(|| brake_hold(x.v, bounds, ts));
        columns[action.index()] = Some(u);
    }
    ReferenceMatrix { columns }
}
