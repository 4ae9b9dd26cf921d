//! Goal-seeking feedback controller used as the nominal policy.
//!
//! Safety never depends on this controller; the filter provides it. The
//! only requirement is that the closed loop reliably reaches the goal in an
//! obstacle-free workspace.

use crate::dynamics::{wrap_angle, RobotState};

/// Square goal region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalSpec {
    pub center: [f64; 2],
    pub half_width: f64,
}

impl GoalSpec {
    pub fn new(cx: f64, cy: f64, half_width: f64) -> Self {
        assert!(half_width > 0.0, "goal half-width must be positive");
        Self {
            center: [cx, cy],
            half_width,
        }
    }

    pub fn contains(&self, state: &RobotState) -> bool {
        (state.x - self.center[0]).abs() <= self.half_width
            && (state.y - self.center[1]).abs() <= self.half_width
    }
}

/// Proportional heading controller toward the goal center:
/// `omega = clamp(k_theta * wrap(bearing - theta), +-omega_max)`.
pub fn goto_goal(state: &RobotState, goal: &GoalSpec, k_theta: f64, omega_max: f64) -> f64 {
    debug_assert!(k_theta > 0.0);
    let bearing = (goal.center[1] - state.y).atan2(goal.center[0] - state.x);
    let error = wrap_angle(bearing - state.theta);
    (k_theta * error).clamp(-omega_max, omega_max)
}
