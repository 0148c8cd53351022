//! Acoustic flow of stationary reflectors seen by a sonar mounted anywhere on
//! a planar mobile platform.
//!
//! Frames and signs used throughout the crate:
//!
//! * Sensor Cartesian frame: `x` along the sensor axis, `y` to the sensor's
//!   left, `z` up. A horizontal reflector at azimuth `theta` sits at
//!   `(r cos theta, -r sin theta, 0)`, i.e. positive azimuth points to the
//!   sensor's right (the `phi = +pi/2` branch of the spherical mapping).
//! * Mounting angles `alpha` (position around the platform centre) and `beta`
//!   (yaw about the sensor pivot) are measured in the same sense as azimuth:
//!   positive towards the platform's right. `delta = alpha + beta` is the yaw
//!   of the sensor axis relative to the direction of travel, so a reflector at
//!   sensor azimuth `-delta` lies dead ahead of the sensor along that
//!   direction.
//! * Platform yaw rate `omega` is positive counter-clockwise (left turn).
//!
//! With these conventions the field below is the rigid-body derivative of a
//! world-fixed reflector, which the finite-difference tests pin down.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ranges below this value are treated as the singular sensor origin.
pub const MIN_RANGE: f64 = 1e-3;

/// Default fixed RK4 step for flow-line tracing, seconds.
pub const DEFAULT_TRACE_STEP: f64 = 5e-3;

/// Reflector position in the sensor's spherical frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarCoord<T> {
    pub r: T,
    pub theta: T,
    pub phi: T,
}

impl<T: Scalar> PolarCoord<T> {
    /// Point in the horizontal plane on the canonical `phi = +pi/2` branch.
    pub fn horizontal(r: T, theta: T) -> Self {
        Self {
            r,
            theta,
            phi: T::FRAC_PI_2(),
        }
    }

    /// Same physical point expressed on the `phi = +pi/2` branch.
    pub fn canonical(self) -> Self {
        if self.phi < T::zero() {
            Self::horizontal(self.r, -self.theta)
        } else {
            self
        }
    }

    fn check_range(&self) -> Result<()> {
        if !(self.r >= T::lit(MIN_RANGE)) {
            return Err(Error::DegenerateRange {
                r: self.r.to_f64_lossy(),
            });
        }
        Ok(())
    }
}

/// Mounting of one sonar on the platform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorPose<T> {
    /// Azimuth of the mounting point around the platform centre, radians.
    pub alpha: T,
    /// Yaw of the sensor about its own pivot, radians.
    pub beta: T,
    /// Distance of the mounting point from the platform centre, meters.
    pub l: T,
}

impl<T: Scalar> SensorPose<T> {
    pub fn new(alpha: T, beta: T, l: T) -> Result<Self> {
        if !(l >= T::zero()) || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sensor pose needs finite angles and l >= 0 (alpha={alpha}, beta={beta}, l={l})"
            )));
        }
        Ok(Self { alpha, beta, l })
    }

    pub fn from_degrees(alpha_deg: T, beta_deg: T, l: T) -> Result<Self> {
        Self::new(alpha_deg.to_radians(), beta_deg.to_radians(), l)
    }

    #[inline]
    pub fn delta(&self) -> T {
        self.alpha + self.beta
    }

    /// Mounting point in the platform frame (`x` forward, `y` left).
    pub fn origin_in_platform(&self) -> [T; 2] {
        [self.l * self.alpha.cos(), -self.l * self.alpha.sin()]
    }

    /// Converts a horizontal sensor-frame point to platform coordinates.
    pub fn to_platform(&self, r: T, theta: T) -> [T; 2] {
        let o = self.origin_in_platform();
        let a = theta + self.delta();
        [o[0] + r * a.cos(), o[1] - r * a.sin()]
    }

    /// Pose mirrored about the platform's x-axis.
    pub fn mirrored(&self) -> Self {
        Self {
            alpha: -self.alpha,
            beta: -self.beta,
            l: self.l,
        }
    }
}

/// Platform ego-motion, constant over one sonar measurement.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EgoMotion<T> {
    /// Forward speed along the platform x-axis, m/s.
    pub v: T,
    /// Yaw rate, rad/s, counter-clockwise positive.
    pub omega: T,
}

impl<T: Scalar> EgoMotion<T> {
    pub fn new(v: T, omega: T) -> Self {
        Self { v, omega }
    }

    fn is_still(&self) -> bool {
        self.v == T::zero() && self.omega == T::zero()
    }
}

/// Time derivative of a reflector's horizontal polar coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowDerivative<T> {
    pub dr_dt: T,
    pub dtheta_dt: T,
}

/// Maps spherical sensor coordinates to the sensor's Cartesian frame.
pub fn spherical_to_cartesian<T: Scalar>(p: &PolarCoord<T>) -> [T; 3] {
    let (st, ct) = p.theta.sin_cos();
    let (sp, cp) = p.phi.sin_cos();
    [p.r * ct, -p.r * st * sp, p.r * st * cp]
}

/// Linear and angular velocity of the sensor expressed in its own frame.
///
/// The lateral lever-arm term carries `-l omega sin(beta)` on the axial
/// component, which is what a rigid platform produces under the frame
/// conventions of this module.
pub fn sensor_velocity<T: Scalar>(pose: &SensorPose<T>, motion: &EgoMotion<T>) -> ([T; 3], [T; 3]) {
    let d = pose.delta();
    let lw = pose.l * motion.omega;
    let v = [
        motion.v * d.cos() - lw * pose.beta.sin(),
        motion.v * d.sin() + lw * pose.beta.cos(),
        T::zero(),
    ];
    (v, [T::zero(), T::zero(), motion.omega])
}

/// Apparent motion of a world-fixed reflector in the sensor's polar frame.
pub fn velocity_field<T: Scalar>(
    pose: &SensorPose<T>,
    motion: &EgoMotion<T>,
    p: &PolarCoord<T>,
) -> Result<FlowDerivative<T>> {
    p.check_range()?;
    let flip = p.phi < T::zero();
    let q = p.canonical();
    let d = field_unchecked(pose, motion, q.r, q.theta);
    Ok(if flip {
        FlowDerivative {
            dr_dt: d.dr_dt,
            dtheta_dt: -d.dtheta_dt,
        }
    } else {
        d
    })
}

#[inline]
fn field_unchecked<T: Scalar>(
    pose: &SensorPose<T>,
    m: &EgoMotion<T>,
    r: T,
    theta: T,
) -> FlowDerivative<T> {
    let lw = pose.l * m.omega;
    let lever = theta + pose.beta;
    let travel = theta + pose.delta();
    FlowDerivative {
        dr_dt: lw * lever.sin() - m.v * travel.cos(),
        dtheta_dt: (lw * lever.cos() + m.v * travel.sin()) / r + m.omega,
    }
}

/// Flow for pure translation (`omega = 0`).
pub fn linear_flow_field<T: Scalar>(
    pose: &SensorPose<T>,
    v: T,
    p: &PolarCoord<T>,
) -> Result<FlowDerivative<T>> {
    p.check_range()?;
    let q = p.canonical();
    let travel = q.theta + pose.delta();
    let dtheta = (v * travel.sin()) / q.r;
    Ok(FlowDerivative {
        dr_dt: -(v * travel.cos()),
        dtheta_dt: if p.phi < T::zero() { -dtheta } else { dtheta },
    })
}

/// Flow for pure rotation (`V = 0`).
pub fn rotation_flow_field<T: Scalar>(
    pose: &SensorPose<T>,
    omega: T,
    p: &PolarCoord<T>,
) -> Result<FlowDerivative<T>> {
    p.check_range()?;
    let q = p.canonical();
    let lw = pose.l * omega;
    let lever = q.theta + pose.beta;
    let dtheta = (lw * lever.cos()) / q.r + omega;
    Ok(FlowDerivative {
        dr_dt: lw * lever.sin(),
        dtheta_dt: if p.phi < T::zero() { -dtheta } else { dtheta },
    })
}

/// Quantity conserved along a flow-line under pure translation.
///
/// Geometrically it is the signed distance (positive to the right) of the
/// reflector from the line through the sensor parallel to the direction of
/// travel.
pub fn flow_invariant<T: Scalar>(pose: &SensorPose<T>, p: &PolarCoord<T>) -> T {
    let q = p.canonical();
    q.r.abs() * (q.theta + pose.delta()).sin()
}

/// Discretised trajectory of one reflector through the sensor frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowLine<T> {
    /// Samples ordered by integration time; all on the canonical branch.
    pub samples: Vec<PolarCoord<T>>,
    /// Integration time of each sample relative to the start point.
    pub times: Vec<T>,
    pub motion: EgoMotion<T>,
    pub pose: SensorPose<T>,
    pub r_max: T,
}

impl<T: Scalar> FlowLine<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Relative displacement allowed per RK4 sub-step.
const MAX_REL_STEP: f64 = 0.01;
const MAX_SUBSTEPS: usize = 4096;
const MAX_SAMPLES_PER_DIRECTION: usize = 2_000_000;

/// Traces the flow-line through `start` forward and backward in time with a
/// fixed-step RK4 integrator.
///
/// Samples are emitted every `step` seconds. Each step is split into equal
/// sub-steps when the reflector moves more than 1% of its range, which only
/// happens close to the singular origin. Tracing stops when the reflector
/// leaves `(0, r_max]` or the `[-pi/2, pi/2]` field of view, or after one full
/// platform revolution.
pub fn trace_flow_line<T: Scalar>(
    pose: &SensorPose<T>,
    motion: &EgoMotion<T>,
    start: &PolarCoord<T>,
    r_max: T,
    step: T,
) -> Result<FlowLine<T>> {
    start.check_range()?;
    if !(step > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "trace step must be positive, got {step}"
        )));
    }
    let start = start.canonical();
    if start.r > r_max {
        return Err(Error::InvalidArgument(format!(
            "start range {} exceeds sensor range {r_max}",
            start.r
        )));
    }
    if start.theta.abs() > T::FRAC_PI_2() {
        return Err(Error::InvalidArgument(format!(
            "start azimuth {} outside the field of view",
            start.theta
        )));
    }
    let mut line = FlowLine {
        samples: vec![start],
        times: vec![T::zero()],
        motion: *motion,
        pose: *pose,
        r_max,
    };
    if motion.is_still() {
        return Ok(line);
    }

    let horizon = if motion.omega != T::zero() {
        T::TAU() / motion.omega.abs()
    } else {
        (T::lit(2.0) * r_max + T::one()) / motion.v.abs()
    };
    let max_steps = (horizon / step)
        .ceil()
        .to_usize()
        .unwrap_or(MAX_SAMPLES_PER_DIRECTION)
        .min(MAX_SAMPLES_PER_DIRECTION);

    let backward = integrate_direction(pose, motion, start, r_max, -step, max_steps);
    let forward = integrate_direction(pose, motion, start, r_max, step, max_steps);

    let mut samples = Vec::with_capacity(backward.len() + forward.len() + 1);
    let mut times = Vec::with_capacity(samples.capacity());
    for (k, s) in backward.iter().enumerate().rev() {
        samples.push(*s);
        times.push(-step * T::from_usize_lossy(k + 1));
    }
    samples.push(start);
    times.push(T::zero());
    for (k, s) in forward.iter().enumerate() {
        samples.push(*s);
        times.push(step * T::from_usize_lossy(k + 1));
    }
    line.samples = samples;
    line.times = times;
    Ok(line)
}

fn in_domain<T: Scalar>(r: T, theta: T, r_max: T) -> bool {
    r >= T::lit(MIN_RANGE)
        && r <= r_max
        && theta.abs() <= T::FRAC_PI_2()
        && r.is_finite()
        && theta.is_finite()
}

fn integrate_direction<T: Scalar>(
    pose: &SensorPose<T>,
    motion: &EgoMotion<T>,
    start: PolarCoord<T>,
    r_max: T,
    h: T,
    max_steps: usize,
) -> Vec<PolarCoord<T>> {
    let mut out = Vec::new();
    let (mut r, mut th) = (start.r, start.theta);
    for _ in 0..max_steps {
        match rk4_step(pose, motion, r, th, h, r_max) {
            Some((nr, nt)) if in_domain(nr, nt, r_max) => {
                r = nr;
                th = nt;
                out.push(PolarCoord::horizontal(r, th));
            }
            _ => break,
        }
    }
    out
}

/// One sample interval, split into sub-steps near the origin. Returns `None`
/// if an intermediate state leaves the physical domain.
fn rk4_step<T: Scalar>(
    pose: &SensorPose<T>,
    m: &EgoMotion<T>,
    r0: T,
    th0: T,
    h: T,
    r_max: T,
) -> Option<(T, T)> {
    let f0 = field_unchecked(pose, m, r0, th0);
    let speed = f0.dr_dt.abs() + r0 * f0.dtheta_dt.abs();
    let want = speed * h.abs() / (T::lit(MAX_REL_STEP) * r0);
    let n = want
        .ceil()
        .to_usize()
        .unwrap_or(MAX_SUBSTEPS)
        .clamp(1, MAX_SUBSTEPS);
    let hs = h / T::from_usize_lossy(n);
    let half = hs / T::lit(2.0);
    let sixth = hs / T::lit(6.0);
    let two = T::lit(2.0);
    let (mut r, mut th) = (r0, th0);
    let floor = T::lit(MIN_RANGE) * T::lit(0.5);
    for _ in 0..n {
        let k1 = field_unchecked(pose, m, r, th);
        let r2 = r + half * k1.dr_dt;
        if r2 < floor {
            return None;
        }
        let k2 = field_unchecked(pose, m, r2, th + half * k1.dtheta_dt);
        let r3 = r + half * k2.dr_dt;
        if r3 < floor {
            return None;
        }
        let k3 = field_unchecked(pose, m, r3, th + half * k2.dtheta_dt);
        let r4 = r + hs * k3.dr_dt;
        if r4 < floor {
            return None;
        }
        let k4 = field_unchecked(pose, m, r4, th + hs * k3.dtheta_dt);
        r = r + sixth * (k1.dr_dt + two * k2.dr_dt + two * k3.dr_dt + k4.dr_dt);
        th = th + sixth * (k1.dtheta_dt + two * k2.dtheta_dt + two * k3.dtheta_dt + k4.dtheta_dt);
        // Sub-steps may not wander far outside before the sample check.
        if r < floor || r > r_max * two {
            return None;
        }
    }
    Some((r, th))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_6, PI};

    fn pose(a: f64, b: f64, l: f64) -> SensorPose<f64> {
        SensorPose::new(a, b, l).unwrap()
    }

    #[test]
    fn cartesian_examples() {
        let c = spherical_to_cartesian(&PolarCoord {
            r: 1.0,
            theta: 0.0,
            phi: FRAC_PI_2,
        });
        assert_abs_diff_eq!(c[0], 1.0);
        assert_abs_diff_eq!(c[1], 0.0);
        assert_abs_diff_eq!(c[2], 0.0);
        let c = spherical_to_cartesian(&PolarCoord {
            r: 2.0,
            theta: FRAC_PI_2,
            phi: FRAC_PI_2,
        });
        assert_abs_diff_eq!(c[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c[1], -2.0);
        assert_abs_diff_eq!(c[2], 0.0, epsilon = 1e-15);
        let c = spherical_to_cartesian(&PolarCoord {
            r: 2.0,
            theta: FRAC_PI_2,
            phi: -FRAC_PI_2,
        });
        assert_abs_diff_eq!(c[1], 2.0);
    }

    #[test]
    fn sensor_velocity_examples() {
        let (v, w) = sensor_velocity(&pose(0.0, 0.0, 0.0), &EgoMotion::new(1.0, 0.3));
        assert_eq!(v, [1.0, 0.0, 0.0]);
        assert_eq!(w, [0.0, 0.0, 0.3]);
        let (v, w) = sensor_velocity(&pose(0.0, 0.0, 0.18), &EgoMotion::new(0.3, 0.0));
        assert_eq!(v, [0.3, 0.0, 0.0]);
        assert_eq!(w, [0.0, 0.0, 0.0]);
        // Right-side sensor looking right; a left turn swings it forward,
        // which is the sensor's +y.
        let (v, _) = sensor_velocity(&pose(FRAC_PI_2, 0.0, 0.1), &EgoMotion::new(0.0, 1.0));
        assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn velocity_field_plug_in() {
        let p0 = pose(0.0, 0.0, 0.0);
        let d = velocity_field(
            &p0,
            &EgoMotion::new(1.0, 0.0),
            &PolarCoord::horizontal(1.0, 0.0),
        )
        .unwrap();
        assert_abs_diff_eq!(d.dr_dt, -1.0);
        assert_abs_diff_eq!(d.dtheta_dt, 0.0);
        let d = velocity_field(
            &p0,
            &EgoMotion::new(1.0, 0.5),
            &PolarCoord::horizontal(2.0, FRAC_PI_2),
        )
        .unwrap();
        assert_abs_diff_eq!(d.dr_dt, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.dtheta_dt, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn singular_range_rejected() {
        let p0 = pose(0.0, 0.0, 0.0);
        let m = EgoMotion::new(1.0, 0.0);
        assert!(matches!(
            velocity_field(&p0, &m, &PolarCoord::horizontal(0.0, 0.0)),
            Err(Error::DegenerateRange { .. })
        ));
        assert!(linear_flow_field(&p0, 1.0, &PolarCoord::horizontal(5e-4, 0.3)).is_err());
        assert!(rotation_flow_field(&p0, 1.0, &PolarCoord::horizontal(0.0, 0.3)).is_err());
        assert!(trace_flow_line(&p0, &m, &PolarCoord::horizontal(0.0, 0.3), 5.0, 0.005).is_err());
    }

    #[test]
    fn linear_examples() {
        let d = linear_flow_field(
            &pose(0.0, 0.0, 0.3),
            1.0,
            &PolarCoord::horizontal(1.0, FRAC_PI_2),
        )
        .unwrap();
        assert_abs_diff_eq!(d.dr_dt, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.dtheta_dt, 1.0);
        let d = linear_flow_field(
            &pose(FRAC_PI_4, 0.0, 0.0),
            1.0,
            &PolarCoord::horizontal(1.0, -FRAC_PI_4),
        )
        .unwrap();
        assert_abs_diff_eq!(d.dr_dt, -1.0);
        assert_abs_diff_eq!(d.dtheta_dt, 0.0);
    }

    #[test]
    fn rotation_examples() {
        let d = rotation_flow_field(
            &pose(0.4, -1.2, 0.0),
            0.7,
            &PolarCoord::horizontal(3.0, 1.1),
        )
        .unwrap();
        assert_abs_diff_eq!(d.dr_dt, 0.0);
        assert_abs_diff_eq!(d.dtheta_dt, 0.7);
        let d = rotation_flow_field(
            &pose(0.0, 0.0, 0.18),
            0.5,
            &PolarCoord::horizontal(1.0, 0.0),
        )
        .unwrap();
        assert_abs_diff_eq!(d.dr_dt, 0.0);
        assert_abs_diff_eq!(d.dtheta_dt, 0.59, epsilon = 1e-15);
    }

    #[test]
    fn invariant_examples() {
        let p0 = pose(0.0, 0.0, 0.0);
        assert_abs_diff_eq!(
            flow_invariant(&p0, &PolarCoord::horizontal(2.0, FRAC_PI_2)),
            2.0
        );
        assert_abs_diff_eq!(
            flow_invariant(&p0, &PolarCoord::horizontal(2.0 * 2f64.sqrt(), FRAC_PI_4)),
            2.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            flow_invariant(
                &pose(FRAC_PI_6, 0.0, 0.0),
                &PolarCoord::horizontal(1.0, -FRAC_PI_6)
            ),
            0.0
        );
    }

    #[test]
    fn mirrored_branch_is_consistent() {
        let ps = pose(0.3, -0.2, 0.1);
        let m = EgoMotion::new(0.4, 0.7);
        let a = velocity_field(
            &ps,
            &m,
            &PolarCoord {
                r: 1.3,
                theta: 0.4,
                phi: -FRAC_PI_2,
            },
        )
        .unwrap();
        let b = velocity_field(&ps, &m, &PolarCoord::horizontal(1.3, -0.4)).unwrap();
        assert_eq!(a.dr_dt, b.dr_dt);
        assert_eq!(a.dtheta_dt, -b.dtheta_dt);
    }

    #[test]
    fn trace_straight_line_keeps_invariant() {
        let p0 = pose(0.0, 0.0, 0.0);
        let fl = trace_flow_line(
            &p0,
            &EgoMotion::new(1.0, 0.0),
            &PolarCoord::horizontal(1.0, FRAC_PI_2),
            5.0,
            0.005,
        )
        .unwrap();
        assert!(fl.len() > 100);
        for s in &fl.samples {
            assert!((s.r * s.theta.sin() - 1.0).abs() < 1e-6, "{s:?}");
            assert!(s.r > 0.0 && s.r <= 5.0);
        }
        assert!(fl.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn trace_pure_rotation_about_sensor() {
        let fl = trace_flow_line(
            &pose(0.0, 0.0, 0.0),
            &EgoMotion::new(0.0, 1.0),
            &PolarCoord::horizontal(2.0, 0.0),
            5.0,
            0.005,
        )
        .unwrap();
        for (s, t) in fl.samples.iter().zip(&fl.times) {
            assert_abs_diff_eq!(s.r, 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(s.theta, *t, epsilon = 1e-9);
        }
        let first = fl.samples.first().unwrap().theta;
        let last = fl.samples.last().unwrap().theta;
        assert!(first < -PI / 2.0 + 0.01 && last > PI / 2.0 - 0.01);
    }

    #[test]
    fn zero_motion_gives_single_point() {
        let fl = trace_flow_line(
            &pose(0.0, 0.0, 0.1),
            &EgoMotion::new(0.0, 0.0),
            &PolarCoord::horizontal(1.0, 0.2),
            5.0,
            0.005,
        )
        .unwrap();
        assert_eq!(fl.len(), 1);
    }

    #[test]
    fn generic_over_f32() {
        let p = SensorPose::<f32>::new(0.0, 0.0, 0.18).unwrap();
        let d = rotation_flow_field(&p, 0.5f32, &PolarCoord::horizontal(1.0f32, 0.0)).unwrap();
        assert!((d.dtheta_dt - 0.59).abs() < 1e-6);
    }
}
