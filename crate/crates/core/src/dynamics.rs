//! Differential-drive plant model and deterministic trajectory simulation.
//!
//! The plant is the standard unicycle reduction of a two-wheel robot:
//!
//! ```text
//!     x'     = r u cos(theta)
//!     y'     = r u sin(theta)
//!     theta' = (r / L) omega
//! ```
//!
//! where `r` is the wheel radius, `L` the axle separation, `u` the mean
//! wheel angular speed (a fixed parameter here) and `omega` the wheel-speed
//! difference, which is the single control input. The system is control
//! affine: the full vector field is `drift + control_direction * omega`
//! exactly.

use std::f64::consts::PI;
use std::io::{self, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("wheel radius must be positive, got {0}")]
    WheelRadius(f64),
    #[error("axle separation must be positive, got {0}")]
    AxleLength(f64),
    #[error("wheel speed parameter must be nonzero")]
    WheelSpeed,
}

/// Physical parameters of the differential-drive plant.
///
/// Two copies of this struct exist in every scenario: the nominal one used
/// to synthesize the filter and the true one used to simulate the plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    /// Wheel radius (m).
    pub wheel_radius: f64,
    /// Axle separation (m).
    pub axle_length: f64,
    /// Mean wheel angular speed (rad/s). Nonzero so that the barrier's
    /// second derivative keeps a nonvanishing control coefficient.
    pub wheel_speed: f64,
}

impl SystemParams {
    pub fn new(wheel_radius: f64, axle_length: f64, wheel_speed: f64) -> Result<Self, ModelError> {
        if !(wheel_radius > 0.0) {
            return Err(ModelError::WheelRadius(wheel_radius));
        }
        if !(axle_length > 0.0) {
            return Err(ModelError::AxleLength(axle_length));
        }
        if wheel_speed == 0.0 || !wheel_speed.is_finite() {
            return Err(ModelError::WheelSpeed);
        }
        Ok(Self {
            wheel_radius,
            axle_length,
            wheel_speed,
        })
    }

    /// Forward speed of the body center: `r * u` (m/s).
    pub fn linear_speed(&self) -> f64 {
        self.wheel_radius * self.wheel_speed
    }

    /// Heading-rate gain: `r / L` (1/m). `theta' = turn_gain * omega`.
    pub fn turn_gain(&self) -> f64 {
        self.wheel_radius / self.axle_length
    }
}

/// Planar pose of the robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    /// Heading (rad), kept in `(-pi, pi]` after every integration step.
    pub theta: f64,
}

impl RobotState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Control-free part of the vector field: `(r u cos(theta), r u sin(theta), 0)`.
pub fn drift(state: &RobotState, params: &SystemParams) -> [f64; 3] {
    let v = params.linear_speed();
    [v * state.theta.cos(), v * state.theta.sin(), 0.0]
}

/// Direction multiplied by the control input: `(0, 0, r / L)`.
/// Constant over the state space.
pub fn control_direction(params: &SystemParams) -> [f64; 3] {
    [0.0, 0.0, params.turn_gain()]
}

/// Full vector field `drift + control_direction * omega`.
pub fn vector_field(state: &RobotState, omega: f64, params: &SystemParams) -> [f64; 3] {
    let f = drift(state, params);
    let g = control_direction(params);
    [f[0] + g[0] * omega, f[1] + g[1] * omega, f[2] + g[2] * omega]
}

/// One classical fourth-order Runge-Kutta step with constant control.
///
/// The heading is re-wrapped into `(-pi, pi]` afterwards. Deterministic:
/// identical inputs give bit-identical outputs.
pub fn step(state: &RobotState, omega: f64, params: &SystemParams, dt: f64) -> RobotState {
    debug_assert!(dt > 0.0);
    let eval = |s: &RobotState| vector_field(s, omega, params);
    let shift = |s: &RobotState, k: &[f64; 3], h: f64| RobotState {
        x: s.x + h * k[0],
        y: s.y + h * k[1],
        theta: s.theta + h * k[2],
    };

    let k1 = eval(state);
    let k2 = eval(&shift(state, &k1, dt / 2.0));
    let k3 = eval(&shift(state, &k2, dt / 2.0));
    let k4 = eval(&shift(state, &k3, dt));

    RobotState {
        x: state.x + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y: state.y + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        theta: wrap_angle(state.theta + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])),
    }
}

/// Why a rollout ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Entered the goal region.
    Goal,
    /// Left the workspace. Logged distinctly from a collision.
    Exit,
    /// Some barrier value dropped below zero.
    Collision,
    /// Step budget exhausted.
    MaxSteps,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Goal => "goal",
            StopReason::Exit => "exit",
            StopReason::Collision => "collision",
            StopReason::MaxSteps => "max_steps",
        }
    }
}

/// What the controller decided at one step, with filter diagnostics.
#[derive(Debug, Clone)]
pub struct StepDecision {
    /// Applied control.
    pub omega: f64,
    /// Barrier values at the current state, one per barrier.
    pub h_values: Vec<f64>,
    /// Minimum over constraints of `a * omega - b`.
    pub slack: f64,
    /// Whether the filter found the constraint set feasible.
    pub feasible: bool,
    /// Whether some constraint was binding (the nominal control was moved).
    pub active: bool,
}

/// One recorded sample of a rollout.
#[derive(Debug, Clone)]
pub struct LogRow {
    pub t: f64,
    pub state: RobotState,
    pub omega: f64,
    pub h_values: Vec<f64>,
    pub slack: f64,
    pub feasible: bool,
    pub active: bool,
}

/// A uniformly sampled rollout with per-step barrier values and filter
/// diagnostics. Time stamps are `i * dt`, strictly increasing.
#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub dt: f64,
    pub rows: Vec<LogRow>,
    pub reason: StopReason,
}

impl TrajectoryLog {
    /// Minimum barrier value over all rows and all barriers.
    pub fn min_h(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.h_values.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn final_state(&self) -> &RobotState {
        &self.rows.last().expect("log is never empty").state
    }

    /// CSV columns: `t, x, y, theta, omega, h_0..h_{m-1}, slack, active,
    /// feasible, reason`. The reason field is populated on the final row
    /// only.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n_h = self.rows.first().map_or(0, |r| r.h_values.len());
        write!(out, "t,x,y,theta,omega")?;
        for i in 0..n_h {
            write!(out, ",h_{i}")?;
        }
        writeln!(out, ",slack,active,feasible,reason")?;
        let last = self.rows.len() - 1;
        for (i, row) in self.rows.iter().enumerate() {
            write!(
                out,
                "{},{},{},{},{}",
                row.t, row.state.x, row.state.y, row.state.theta, row.omega
            )?;
            for h in &row.h_values {
                write!(out, ",{h}")?;
            }
            let reason = if i == last { self.reason.as_str() } else { "" };
            writeln!(
                out,
                ",{},{},{},{}",
                row.slack, row.active as u8, row.feasible as u8, reason
            )?;
        }
        Ok(())
    }
}

/// Roll the true plant forward under a controller until a stop predicate
/// fires or the step budget runs out.
///
/// The controller is consulted at every sampled state, including the
/// terminal one, so each row records the control the controller would have
/// applied there. The stop predicate sees the current time, state and
/// barrier values; the first satisfied predicate ends the log.
pub fn simulate<C, S>(
    initial: RobotState,
    mut controller: C,
    params: &SystemParams,
    dt: f64,
    max_steps: usize,
    stop: S,
) -> TrajectoryLog
where
    C: FnMut(f64, &RobotState) -> StepDecision,
    S: Fn(f64, &RobotState, &[f64]) -> Option<StopReason>,
{
    let mut rows = Vec::new();
    let mut state = initial;
    let mut reason = StopReason::MaxSteps;
    for i in 0..=max_steps {
        let t = i as f64 * dt;
        let decision = controller(t, &state);
        let omega = decision.omega;
        rows.push(LogRow {
            t,
            state,
            omega,
            h_values: decision.h_values,
            slack: decision.slack,
            feasible: decision.feasible,
            active: decision.active,
        });
        if let Some(r) = stop(t, &state, &rows.last().unwrap().h_values) {
            reason = r;
            break;
        }
        if i == max_steps {
            break;
        }
        state = step(&state, omega, params, dt);
    }
    TrajectoryLog { dt, rows, reason }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(r: f64, l: f64, u: f64) -> SystemParams {
        SystemParams::new(r, l, u).unwrap()
    }

    #[test]
    fn params_reject_invalid() {
        assert!(SystemParams::new(0.0, 0.1, 1.0).is_err());
        assert!(SystemParams::new(0.1, -0.1, 1.0).is_err());
        assert!(SystemParams::new(0.1, 0.1, 0.0).is_err());
    }

    #[test]
    fn drift_matches_model() {
        let p = params(0.1, 0.1, 1.0);
        let f = drift(&RobotState::new(0.0, 0.0, 0.0), &p);
        assert_relative_eq!(f[0], 0.1, epsilon = 1e-15);
        assert_relative_eq!(f[1], 0.0, epsilon = 1e-15);
        assert_eq!(f[2], 0.0);

        let f = drift(&RobotState::new(0.0, 0.0, PI / 2.0), &p);
        assert!(f[0].abs() < 1e-15);
        assert_relative_eq!(f[1], 0.1, epsilon = 1e-15);

        // Reduced wheel radius scales the forward speed.
        let p = params(0.07, 0.1, 1.0);
        let f = drift(&RobotState::new(2.0, 0.0, 0.0), &p);
        assert_relative_eq!(f[0], 0.07, epsilon = 1e-15);
    }

    #[test]
    fn control_direction_is_constant_ratio() {
        assert_relative_eq!(control_direction(&params(0.1, 0.1, 1.0))[2], 1.0);
        assert_relative_eq!(
            control_direction(&params(0.1, 0.13, 1.0))[2],
            0.1 / 0.13,
            epsilon = 1e-15
        );
        assert_relative_eq!(control_direction(&params(0.07, 0.1, 1.0))[2], 0.7);
    }

    #[test]
    fn affine_decomposition_is_exact() {
        let p = params(0.08, 0.12, 0.9);
        let s = RobotState::new(1.3, -0.4, 0.7);
        for omega in [-3.0, -1.0, 0.0, 0.5, 2.0] {
            let full = vector_field(&s, omega, &p);
            let f = drift(&s, &p);
            let g = control_direction(&p);
            for i in 0..3 {
                assert_eq!(full[i], f[i] + g[i] * omega);
            }
        }
    }

    #[test]
    fn straight_line_step() {
        let p = params(0.1, 0.1, 1.0);
        let s = step(&RobotState::new(0.0, 0.0, 0.0), 0.0, &p, 1.0);
        assert_relative_eq!(s.x, 0.1, epsilon = 1e-12);
        assert!(s.y.abs() < 1e-15);
        assert_eq!(s.theta, 0.0); // theta' = (r/L) * 0 exactly
    }

    #[test]
    fn zero_turn_preserves_distance_per_step() {
        let p = params(0.1, 0.1, 0.7);
        let mut s = RobotState::new(-1.0, 0.5, 1.1);
        let dt = 0.1;
        for _ in 0..50 {
            let next = step(&s, 0.0, &p, dt);
            let d = ((next.x - s.x).powi(2) + (next.y - s.y).powi(2)).sqrt();
            assert_relative_eq!(d, p.linear_speed() * dt, epsilon = 1e-12);
            s = next;
        }
    }

    #[test]
    fn step_is_deterministic() {
        let p = params(0.1, 0.1, 1.0);
        let s = RobotState::new(0.3, -0.2, 2.1);
        let a = step(&s, 1.7, &p, 0.1);
        let b = step(&s, 1.7, &p, 0.1);
        assert_eq!(a, b);
    }

    #[test]
    fn theta_stays_wrapped() {
        let p = params(0.1, 0.1, 1.0);
        let mut s = RobotState::new(0.0, 0.0, 3.0);
        for _ in 0..200 {
            s = step(&s, 8.0, &p, 0.1);
            assert!(s.theta > -PI && s.theta <= PI, "theta = {}", s.theta);
        }
    }

    #[test]
    fn wrap_angle_edges() {
        assert_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI), PI);
        assert_relative_eq!(wrap_angle(-0.5), -0.5);
        assert_relative_eq!(wrap_angle(2.0 * PI + 0.25), 0.25, epsilon = 1e-12);
    }

    /// Richardson-style order check: against a dt/10 reference on a curved
    /// rollout, halving dt should shrink the endpoint error by roughly
    /// 2^4 = 16.
    #[test]
    fn rk4_order_on_curved_rollout() {
        let p = params(0.1, 0.1, 1.0);
        let start = RobotState::new(0.0, 0.0, 0.2);
        let omega = 2.5;
        let horizon = 2.0;

        let endpoint = |dt: f64| {
            let n = (horizon / dt).round() as usize;
            let mut s = start;
            for _ in 0..n {
                s = step(&s, omega, &p, dt);
            }
            s
        };

        let reference = endpoint(0.004);
        let err = |dt: f64| {
            let e = endpoint(dt);
            ((e.x - reference.x).powi(2) + (e.y - reference.y).powi(2)).sqrt()
        };
        let e1 = err(0.04);
        let e2 = err(0.02);
        let ratio = e1 / e2;
        assert!(
            (8.0..40.0).contains(&ratio),
            "expected ~16x error reduction, got {ratio} ({e1} -> {e2})"
        );
    }

    #[test]
    fn simulate_stops_immediately_in_goal() {
        let p = params(0.1, 0.1, 1.0);
        let log = simulate(
            RobotState::new(0.0, 0.0, 0.0),
            |_, _| StepDecision {
                omega: 0.0,
                h_values: vec![1.0],
                slack: 0.0,
                feasible: true,
                active: false,
            },
            &p,
            0.1,
            100,
            |_, s, _| {
                (s.x.abs() < 0.5 && s.y.abs() < 0.5).then_some(StopReason::Goal)
            },
        );
        assert_eq!(log.rows.len(), 1);
        assert_eq!(log.reason, StopReason::Goal);
    }

    #[test]
    fn simulate_straight_line_exits_workspace() {
        let p = params(0.1, 0.1, 1.0);
        let log = simulate(
            RobotState::new(-2.5, -2.5, 0.0),
            |_, _| StepDecision {
                omega: 0.0,
                h_values: vec![],
                slack: 0.0,
                feasible: true,
                active: false,
            },
            &p,
            0.1,
            100_000,
            |_, s, _| {
                (s.x.abs() > 3.0 || s.y.abs() > 3.0).then_some(StopReason::Exit)
            },
        );
        assert_eq!(log.reason, StopReason::Exit);
        assert!(log.final_state().x > 3.0);
    }

    #[test]
    fn csv_has_reason_on_final_row_only() {
        let p = params(0.1, 0.1, 1.0);
        let log = simulate(
            RobotState::new(0.0, 0.0, 0.0),
            |_, _| StepDecision {
                omega: 0.25,
                h_values: vec![2.0, 3.0],
                slack: 0.1,
                feasible: true,
                active: false,
            },
            &p,
            0.1,
            5,
            |_, _, _| None,
        );
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.trim_end().lines().collect();
        assert_eq!(lines[0], "t,x,y,theta,omega,h_0,h_1,slack,active,feasible,reason");
        assert_eq!(lines.len(), 1 + 6);
        for line in &lines[1..lines.len() - 1] {
            assert!(line.ends_with(','), "interior row carries a reason: {line}");
        }
        assert!(lines.last().unwrap().ends_with("max_steps"));
    }
}
