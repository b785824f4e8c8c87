//! Intelligent Driver Model longitudinal control and a three-gap
//! lane-change acceptance rule for the scripted baseline vehicles.

use crate::dynamics::InputBox;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdmParams {
    /// Free-flow desired speed (m/s).
    pub v0: f64,
    /// Desired time headway (s).
    pub t_headway: f64,
    /// Standstill jam distance (m).
    pub s0: f64,
    /// Maximum comfortable acceleration (m/s^2).
    pub a_max: f64,
    /// Comfortable braking deceleration, positive (m/s^2).
    pub b_comf: f64,
    /// Free-flow acceleration exponent.
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams { v0: 30.0, t_headway: 1.5, s0: 2.0, a_max: 1.4, b_comf: 2.0, delta: 4.0 }
    }
}

/// IDM acceleration for a follower at speed `v` behind a leader at speed
/// `v_lead` with bumper-to-bumper gap `gap`. A non-positive gap means the
/// model's assumptions are already broken, so the answer is full braking.
/// The result is clamped into the vehicle's admissible box either way.
pub fn idm_accel(v: f64, v_lead: f64, gap: f64, p: &IdmParams, bounds: &InputBox) -> f64 {
    if gap <= 0.0 {
        return bounds.accel_min;
    }
    let s_star = p.s0 + v * p.t_headway + v * (v - v_lead) / (2.0 * libm::sqrt(p.a_max * p.b_comf));
    let a = p.a_max * (1.0 - libm::pow(v / p.v0, p.delta) - (s_star / gap) * (s_star / gap));
    a.clamp(bounds.accel_min, bounds.accel_max)
}

/// Free-road IDM acceleration (no leader in sensing range).
pub fn idm_accel_free(v: f64, p: &IdmParams, bounds: &InputBox) -> f64 {
    let a = p.a_max * (1.0 - libm::pow(v / p.v0, p.delta));
    a.clamp(bounds.accel_min, bounds.accel_max)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapAcceptanceParams {
    /// Minimum acceptable gap to the target-lane leader (m).
    pub front_min: f64,
    /// Minimum acceptable gap to the target-lane follower (m).
    pub rear_min: f64,
    /// The target lane must offer at least this much more front room than
    /// the current lane before a change is worth committing to (m).
    pub incentive_margin: f64,
    /// Braking budget for the feasibility veto on scripted changes
    /// (m/s^2, positive).
    pub b_safe: f64,
}

impl Default for GapAcceptanceParams {
    fn default() -> Self {
        GapAcceptanceParams { front_min: 10.0, rear_min: 8.0, incentive_margin: 5.0, b_safe: 4.0 }
    }
}

/// Three-gap acceptance: enough room ahead in the target lane, enough room
/// behind, and a real incentive over the current lane.
pub fn gap_acceptance(
    current_front_gap: f64,
    target_front_gap: f64,
    target_rear_gap: f64,
    p: &GapAcceptanceParams,
) -> bool {
    target_front_gap >= p.front_min
        && target_rear_gap >= p.rear_min
        && target_front_gap >= current_front_gap + p.incentive_margin
}

/// Whether a closing speed can be shed within `gap` while keeping the jam
/// distance `s0`, braking no harder than `b_safe`. Static gap thresholds
/// say nothing about approach speed, and during the start-of-episode
/// transient adjacent lanes can differ by tens of m/s; a pair that passes
/// the three-gap rule but fails this is doomed before the maneuver ends.
pub fn closing_feasible(gap: f64, closing: f64, s0: f64, b_safe: f64) -> bool {
    closing <= 0.0 || closing * closing <= 2.0 * b_safe * (gap - s0)
}
