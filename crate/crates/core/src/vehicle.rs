//! Differential-drive kinematics, waypoint guidance and collision checks.

use serde::{Deserialize, Serialize};

use crate::controller::VelocityCommand;
use crate::error::{Error, Result};
use crate::flow::SensorPose;
use crate::scalar::{wrap_angle, Scalar};
use crate::sonar::{dist, SensorFrame, WorldModel};

const STRAIGHT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState<T> {
    pub position: [T; 2],
    /// Counter-clockwise from world x, kept in [−π, π].
    pub heading: T,
    pub radius: T,
}

impl<T: Scalar> RobotState<T> {
    pub fn new(position: [T; 2], heading: T) -> Self {
        Self {
            position,
            heading: wrap_angle(heading),
            radius: T::lit(0.2),
        }
    }

    /// World frame of a sensor mounted at `pose`. Mount angles are measured
    /// clockwise, so a positive `alpha` places the sensor on the right.
    pub fn sensor_frame(&self, pose: &SensorPose<T>) -> SensorFrame<T> {
        let a = self.heading - pose.alpha;
        SensorFrame {
            position: [
                self.position[0] + pose.l * a.cos(),
                self.position[1] + pose.l * a.sin(),
            ],
            heading: wrap_angle(a - pose.beta),
        }
    }

    /// Expresses a world point in the platform frame (x forward, y left).
    pub fn to_platform(&self, p: [T; 2]) -> [T; 2] {
        let (s, c) = self.heading.sin_cos();
        let d = [p[0] - self.position[0], p[1] - self.position[1]];
        [c * d[0] + s * d[1], -s * d[0] + c * d[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig<T> {
    pub waypoint_capture_radius: T,
    pub cruise_v: T,
    pub heading_gain: T,
    pub omega_limit: T,
}

impl<T: Scalar> Default for GuidanceConfig<T> {
    fn default() -> Self {
        Self {
            waypoint_capture_radius: T::lit(0.3),
            cruise_v: T::lit(0.3),
            heading_gain: T::one(),
            omega_limit: T::lit(1.5),
        }
    }
}

impl<T: Scalar> GuidanceConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.waypoint_capture_radius,
            self.cruise_v,
            self.heading_gain,
            self.omega_limit,
        ];
        if all.iter().all(|v| *v > T::zero() && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("guidance parameters must be positive".into()))
        }
    }
}

/// Proportional heading seeker. Returns the input command and the index of
/// the waypoint still to be reached (`waypoints.len()` once all are done).
pub fn guidance_tick<T: Scalar>(
    state: &RobotState<T>,
    waypoints: &[[T; 2]],
    mut index: usize,
    cfg: &GuidanceConfig<T>,
) -> (VelocityCommand<T>, usize) {
    while index < waypoints.len()
        && dist(state.position, waypoints[index]) <= cfg.waypoint_capture_radius
    {
        index += 1;
    }
    let Some(target) = waypoints.get(index) else {
        return (VelocityCommand::zero(), index);
    };
    let bearing = (target[1] - state.position[1]).atan2(target[0] - state.position[0]);
    let err = wrap_angle(bearing - state.heading);
    let v = cfg.cruise_v * err.cos().max(T::zero());
    let omega = (cfg.heading_gain * err)
        .max(-cfg.omega_limit)
        .min(cfg.omega_limit);
    (VelocityCommand::new(v, omega), index)
}

/// Exact unicycle update for a command held constant over `dt`.
pub fn integrate_motion<T: Scalar>(
    state: &RobotState<T>,
    cmd: VelocityCommand<T>,
    dt: T,
) -> RobotState<T> {
    let h = state.heading;
    let (dx, dy) = if cmd.omega.abs() < T::lit(STRAIGHT_EPS) {
        (cmd.v * dt * h.cos(), cmd.v * dt * h.sin())
    } else {
        let rho = cmd.v / cmd.omega;
        let h1 = h + cmd.omega * dt;
        (rho * (h1.sin() - h.sin()), -rho * (h1.cos() - h.cos()))
    };
    RobotState {
        position: [state.position[0] + dx, state.position[1] + dy],
        heading: wrap_angle(h + cmd.omega * dt),
        radius: state.radius,
    }
}

/// Nearest geometry contact found by [`check_collision`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact<T> {
    pub point: [T; 2],
    /// Distance from the robot centre to the contact point.
    pub distance: T,
}

/// Closed-contact test of the robot disc against every wall, circle and
/// mover at time `t`. Also returns the nearest geometry point, if any exists.
pub fn check_collision<T: Scalar>(
    state: &RobotState<T>,
    world: &WorldModel<T>,
    t: T,
) -> (bool, Option<Contact<T>>) {
    let mut best: Option<Contact<T>> = None;
    let mut hit = false;
    let mut consider = |point: [T; 2], distance: T, clearance: T| {
        if clearance <= T::zero() {
            hit = true;
        }
        if best.is_none_or(|b| distance < b.distance) {
            best = Some(Contact { point, distance });
        }
    };
    for w in &world.walls {
        let p = w.closest_point(state.position);
        let d = dist(p, state.position);
        consider(p, d, d - state.radius);
    }
    for c in world.circles_at(t) {
        let d = dist(c.center, state.position);
        let p = if d > T::zero() {
            [
                c.center[0] + c.radius * (state.position[0] - c.center[0]) / d,
                c.center[1] + c.radius * (state.position[1] - c.center[1]) / d,
            ]
        } else {
            c.center
        };
        let surface = (d - c.radius).max(T::zero());
        consider(p, surface, d - c.radius - state.radius);
    }
    (hit, best)
}
