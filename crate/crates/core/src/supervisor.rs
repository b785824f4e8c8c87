//! Action vetting and low-level safety filtering.
//!
//! At every decision boundary the proposed discrete action is checked
//! by a strict barrier QP. If it fails, remaining actions are tried in
//! descending Q-value order; if nothing passes, the vehicle enters an
//! emergency stop. Between decisions, every control tick projects the
//! active plan's reference input through the slack-relaxed QP, so the
//! executed control always respects the barrier decay condition as far
//! as the input box allows.
//!
//! Barriers are affine in the ego state. Positions enter in an
//! ego-centered frame (`p_x = 0` at the tick start) so that ring-road
//! wraparound never shows up inside a half-space description; neighbor
//! geometry arrives pre-reduced to signed bumper gaps.

use alloc::vec;
use alloc::vec::Vec;

use crate::cbf::{solve_noise_robust, solve_strict, AffineBarrier, QpProblem};
use crate::dynamics::{
    f_bicycle, g_bicycle, BicycleParams, ControlInput, InputBox, VehicleState, STATE_DIM,
};
use crate::planner::{Action, LaneGeometry, ReferenceMatrix, ACTION_COUNT};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisorParams {
    /// Per-tick decay rate of the gap barriers. This must stay small:
    /// the allowed shrink per tick is `eta * h`, and braking authority
    /// is only `|accel_min| * time_headway * ts` worth of `h` per tick,
    /// so a large `eta` lets a fast vehicle eat its entire margin
    /// before the constraint ever binds. At 100 Hz, 0.002 corresponds
    /// to letting `h` contract at roughly 0.2/s, which keeps the
    /// required deceleration within `accel_min` for approach speeds
    /// well above the cruise speed.
    pub eta: f64,
    /// Per-tick decay rate of the lateral corridor rows. These have no
    /// input authority within a tick (steering moves heading first,
    /// position second), so a small rate would veto every lane change;
    /// a large one keeps them inert until the corridor edge is nearly
    /// touched.
    pub eta_lat: f64,
    /// Hard bumper-to-bumper clearance.
    pub d_min: f64,
    /// Clearance grows by this many seconds of the trailing speed.
    pub time_headway: f64,
    /// Shrinks the lateral corridor away from lane edges.
    pub lane_margin: f64,
    pub big_m: f64,
    pub es_heading_gain: f64,
    pub es_lateral_gain: f64,
}

impl Default for SupervisorParams {
    fn default() -> Self {
        Self {
            eta: 0.002,
            eta_lat: 0.5,
            d_min: 2.0,
            time_headway: 0.5,
            lane_margin: 0.0,
            big_m: 1e6,
            es_heading_gain: 1.0,
            es_lateral_gain: 0.1,
        }
    }
}

/// Leading or trailing vehicle reduced to what the barriers need:
/// `gap` is the bumper-to-bumper arc distance (negative means overlap),
/// `speed` the neighbor's longitudinal speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborInfo {
    pub gap: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LaneNeighbors {
    pub leader: Option<NeighborInfo>,
    pub follower: Option<NeighborInfo>,
}

/// Neighbors around the ego, keyed by lane relative to the ego's
/// current (derived) lane. `left`/`right` are `None` where the road
/// ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborSet {
    pub current: LaneNeighbors,
    pub left: Option<LaneNeighbors>,
    pub right: Option<LaneNeighbors>,
}

impl NeighborSet {
    pub fn empty_road(lane: usize, lane_count: usize) -> Self {
        NeighborSet {
            current: LaneNeighbors::default(),
            left: (lane + 1 < lane_count).then_some(LaneNeighbors::default()),
            right: (lane > 0).then_some(LaneNeighbors::default()),
        }
    }

    fn toward(&self, ego_lane: usize, target_lane: usize) -> Option<&LaneNeighbors> {
        match target_lane as i64 - ego_lane as i64 {
            0 => Some(&self.current),
            1 => self.left.as_ref(),
            -1 => self.right.as_ref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Executed {
    Action(Action),
    EmergencyStop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackResult {
    pub executed: Executed,
    pub control: ControlInput,
    /// Slack spent by the relaxed QP that produced `control`.
    pub zeta: f64,
    pub overridden: bool,
    pub es: bool,
    /// Strict-QP verdict per action index; `None` where the action was
    /// unavailable or never reached (the search stops at the first
    /// feasible candidate).
    pub vetted: [Option<bool>; ACTION_COUNT],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilteredControl {
    pub control: ControlInput,
    pub zeta: f64,
}

/// Candidate actions in vetting order: the proposal first, the rest by
/// descending Q, exact ties by action index.
pub fn candidate_order(proposed: Action, q_values: &[f64; ACTION_COUNT]) -> [Action; ACTION_COUNT] {
    let mut rest: Vec<Action> = Action::ALL
        .into_iter()
        .filter(|a| *a != proposed)
        .collect();
    rest.sort_by(|a, b| {
        q_values[b.index()]
            .partial_cmp(&q_values[a.index()])
            .expect("finite Q values")
            .then(a.index().cmp(&b.index()))
    });
    [proposed, rest[0], rest[1]]
}

/// Everything the supervisor needs besides per-vehicle state. Shared
/// immutably by all vehicles of a tick.
#[derive(Debug, Clone, Copy)]
pub struct SupervisorContext<'a> {
    pub geom: &'a LaneGeometry,
    pub params: &'a SupervisorParams,
    pub bicycle: &'a BicycleParams,
    pub bounds: &'a InputBox,
    /// Componentwise state-noise bound; zero entries mean noiseless.
    pub w_bound: [f64; STATE_DIM],
}

impl<'a> SupervisorContext<'a> {
    /// Barrier set for holding/entering `target_lane`: a lateral
    /// corridor spanning the ego's lane and the target lane, a front
    /// barrier in the ego's lane, and front/rear barriers in the target
    /// lane when it differs. Absent neighbors contribute nothing.
    pub fn build_barriers(
        &self,
        x: &VehicleState,
        target_lane: usize,
        neighbors: &NeighborSet,
    ) -> Vec<AffineBarrier> {
        let p = self.params;
        let ts = self.bicycle.ts;
        let ego_lane = self.geom.lane_of(x.p_y);
        let lo_lane = ego_lane.min(target_lane);
        let hi_lane = ego_lane.max(target_lane);
        let y_lo = lo_lane as f64 * self.geom.lane_width + p.lane_margin;
        let y_hi = (hi_lane + 1) as f64 * self.geom.lane_width - p.lane_margin;

        let mut barriers = Vec::with_capacity(5);
        // h = p_y - y_lo and h = y_hi - p_y.
        barriers.push(AffineBarrier::new(vec![0.0, 1.0, 0.0, 0.0], -y_lo, p.eta_lat).unwrap());
        barriers.push(AffineBarrier::new(vec![0.0, -1.0, 0.0, 0.0], y_hi, p.eta_lat).unwrap());

        // Neighbors are frozen parameters inside one tick, so their own
        // motion cannot appear in p^T x. Folding it into the offset as
        // speed * ts / eta makes the decay condition come out exact in
        // relative terms: the front row enforces
        //   (v_lead - v - tau a) ts >= -eta (gap - d_min - tau v),
        // i.e. matched-speed following at gap >= d_min + tau v is
        // unconstrained, and approach is limited to the decay rate.
        let mut front = |info: &NeighborInfo| {
            barriers.push(
                AffineBarrier::new(
                    vec![-1.0, 0.0, 0.0, -p.time_headway],
                    info.gap + info.speed * ts / p.eta - p.d_min,
                    p.eta,
                )
                .unwrap(),
            );
        };
        if let Some(leader) = &neighbors.current.leader {
            front(leader);
        }
        if target_lane != ego_lane {
            if let Some(lane) = neighbors.toward(ego_lane, target_lane) {
                if let Some(leader) = &lane.leader {
                    front(leader);
                }
                if let Some(f) = &lane.follower {
                    // Rear row, no input authority: feasible only while
                    //   (v - v_f) ts >= -eta (gap - d_min - tau v_f),
                    // so merging in front of a faster follower needs the
                    // headroom its speed demands.
                    barriers.push(
                        AffineBarrier::new(
                            vec![1.0, 0.0, 0.0, 0.0],
                            f.gap - p.d_min - (p.time_headway + ts / p.eta) * f.speed,
                            p.eta,
                        )
                        .unwrap(),
                    );
                }
            }
        }
        barriers
    }

    /// Input box for one tick: the static bounds tightened so braking
    /// cannot drive the speed negative within the tick.
    fn tick_box(&self, v: f64) -> Vec<(f64, f64)> {
        let b = self.bounds;
        let accel_lo = b.accel_min.max(-v / self.bicycle.ts).min(b.accel_max);
        vec![
            (-b.tan_delta_max, b.tan_delta_max),
            (accel_lo, b.accel_max),
        ]
    }

    fn qp_for(
        &self,
        x: &VehicleState,
        target_lane: usize,
        neighbors: &NeighborSet,
        u_ref: ControlInput,
    ) -> QpProblem {
        // Ego-centered frame: barriers were built against p_x = 0.
        let local = VehicleState { p_x: 0.0, ..*x };
        let g = g_bicycle(&local, self.bicycle);
        QpProblem {
            x: local.to_array().to_vec(),
            f_x: f_bicycle(&local, self.bicycle).to_vec(),
            g_x: g.iter().map(|row| row.to_vec()).collect(),
            u_ref: u_ref.to_array().to_vec(),
            input_box: self.tick_box(x.v),
            barriers: self.build_barriers(x, target_lane, neighbors),
            w_bound: self.w_bound.to_vec(),
            big_m: self.params.big_m,
        }
    }

    /// Strict-QP feasibility of steering toward `target_lane` (noise
    /// margins included whenever the context carries a nonzero bound).
    pub fn vet(
        &self,
        x: &VehicleState,
        target_lane: usize,
        neighbors: &NeighborSet,
        u_ref: ControlInput,
    ) -> bool {
        let qp = self.qp_for(x, target_lane, neighbors, u_ref);
        solve_strict(&qp).expect("well-formed QP").feasible
    }

    /// Per-tick safety projection of a reference input. Always returns
    /// a control; slack reports how much barrier decay it had to buy.
    pub fn filter_control(
        &self,
        x: &VehicleState,
        target_lane: usize,
        neighbors: &NeighborSet,
        u_ref: ControlInput,
    ) -> FilteredControl {
        let qp = self.qp_for(x, target_lane, neighbors, u_ref);
        let sol = solve_noise_robust(&qp).expect("well-formed QP");
        FilteredControl {
            control: ControlInput {
                tan_delta: sol.u[0],
                accel: sol.u[1],
            },
            zeta: sol.zeta,
        }
    }

    /// Total fallback: strongest admissible braking plus proportional
    /// steering toward the current lane center. At standstill both
    /// channels go to zero.
    pub fn emergency_stop(&self, x: &VehicleState) -> ControlInput {
        let b = self.bounds;
        let accel = (-x.v / self.bicycle.ts).max(b.accel_min).min(b.accel_max);
        let tan_delta = if x.v > 0.0 {
            let y_err = self.geom.center(self.geom.lane_of(x.p_y)) - x.p_y;
            (self.params.es_lateral_gain * y_err - self.params.es_heading_gain * x.psi)
                .clamp(-b.tan_delta_max, b.tan_delta_max)
        } else {
            0.0
        };
        ControlInput { tan_delta, accel }
    }

    /// The decision-boundary feedback process: vet the proposal, fall
    /// back through the other actions in descending Q order, and as a
    /// last resort command an emergency stop.
    pub fn feedback_action(
        &self,
        proposed: Action,
        q_values: &[f64; ACTION_COUNT],
        x: &VehicleState,
        neighbors: &NeighborSet,
        refs: &ReferenceMatrix,
    ) -> FeedbackResult {
        let ego_lane = self.geom.lane_of(x.p_y);
        let mut vetted = [None; ACTION_COUNT];
        for action in candidate_order(proposed, q_values) {
            let Some(u_ref) = refs.select(action) else {
                continue;
            };
            let Some(target) = action.target_lane(ego_lane, self.geom.lane_count) else {
                continue;
            };
            let ok = self.vet(x, target, neighbors, u_ref);
            vetted[action.index()] = Some(ok);
            if ok {
                let filtered = self.filter_control(x, target, neighbors, u_ref);
                return FeedbackResult {
                    executed: Executed::Action(action),
                    control: filtered.control,
                    zeta: filtered.zeta,
                    overridden: action != proposed,
                    es: false,
                    vetted,
                };
            }
        }
        FeedbackResult {
            executed: Executed::EmergencyStop,
            control: self.emergency_stop(x),
            zeta: 0.0,
            overridden: true,
            es: true,
            vetted,
        }
    }
}
