//! Population-level performance measures: flow, ride comfort, and the
//! scalar reward that mixes them.

use crate::planner::Action;

/// Traffic flow in vehicles per second: density (vehicles per metre of ring)
/// times mean speed.
pub fn traffic_flow(n_vehicles: usize, road_length: f64, mean_speed: f64) -> f64 {
    (n_vehicles as f64 / road_length) * mean_speed
}

/// Comfort score for one vehicle over one tick. Smooth lane keeping earns 3,
/// harsh longitudinal control 2, any lane change 1, and an emergency stop 0.
pub fn comfort_single(accel: f64, action: Action, emergency: bool, theta: f64) -> f64 {
    if emergency {
        0.0
    } else if action.is_lane_change() {
        1.0
    } else if accel.abs() < theta {
        3.0
    } else {
        2.0
    }
}

/// Global reward shared by every agent: weighted flow plus mean comfort.
pub fn reward(flow: f64, comfort: f64, flow_weight: f64) -> f64 {
    flow_weight * flow + comfort
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_is_density_times_mean_speed() {
        let f = traffic_flow(60, 200.0, 12.5);
        assert!((f - 0.3 * 12.5).abs() < 1e-12);
    }

    #[test]
    fn comfort_table_is_exhaustive() {
        let th = 1.0;
        assert_eq!(comfort_single(0.5, Action::KeepLane, false, th), 3.0);
        assert_eq!(comfort_single(-2.5, Action::KeepLane, false, th), 2.0);
        assert_eq!(comfort_single(1.0, Action::KeepLane, false, th), 2.0); // |a| = theta counts as harsh
        assert_eq!(comfort_single(0.0, Action::ChangeLeft, false, th), 1.0);
        assert_eq!(comfort_single(0.0, Action::ChangeRight, false, th), 1.0);
        assert_eq!(comfort_single(0.0, Action::KeepLane, true, th), 0.0);
    }

    #[test]
    fn reward_mixes_flow_and_comfort() {
        assert!((reward(2.0, 2.5, 1.0) - 4.5).abs() < 1e-12);
        assert!((reward(2.0, 2.5, 0.0) - 2.5).abs() < 1e-12);
    }
}
