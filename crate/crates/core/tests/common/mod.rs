//! Independent oracles shared by the integration tests.
//!
//! Nothing here calls the library's geometry: poses are turned into rigid
//! transforms with nalgebra and everything downstream is recomputed from
//! those.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_2;

use nalgebra::{Isometry2, Point2, Vector2};
use rand::Rng;
use sonarnav_core::energyscape::{ControlRegion, GridSpec};
use sonarnav_core::flow::SensorPose;

/// The ten reference sensor layouts: (alpha deg, beta deg, l cm) per sensor.
pub const LAYOUTS: [&[(f64, f64, f64)]; 10] = [
    &[(0.0, 0.0, 18.0)],
    &[(0.0, -20.0, 14.0), (90.0, -10.0, 10.0), (-90.0, -5.0, 8.0)],
    &[(90.0, -20.0, 10.0), (-90.0, 20.0, 10.0)],
    &[(0.0, 0.0, 12.0), (90.0, 0.0, 12.0), (-90.0, 0.0, 12.0)],
    &[(45.0, 0.0, 4.0), (-135.0, 0.0, 4.0)],
    &[(0.0, 0.0, 10.0), (-180.0, 0.0, 0.0)],
    &[(0.0, 20.0, 6.0), (90.0, 10.0, 0.0), (-90.0, 20.0, 14.0)],
    &[
        (0.0, 0.0, 0.0),
        (120.0, -120.0, 14.0),
        (-120.0, 120.0, 14.0),
    ],
    &[(180.0, -180.0, 6.0)],
    &[(45.0, -10.0, 6.0), (-45.0, 10.0, 6.0), (-180.0, 0.0, 0.0)],
];

pub fn table_poses(setup: usize) -> Vec<SensorPose<f64>> {
    LAYOUTS[setup]
        .iter()
        .map(|&(a, b, l)| SensorPose::from_degrees(a, b, l / 100.0).unwrap())
        .collect()
}

pub fn all_table_poses() -> Vec<SensorPose<f64>> {
    (0..10).flat_map(table_poses).collect()
}

pub fn config_path(setup: usize) -> std::path::PathBuf {
    asset(&format!("configs/setup{:02}.json", setup + 1))
}

pub fn asset(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../assets")
        .join(rel)
}

/// Rigid transform taking sensor-frame points (x along the axis, y left) to
/// the platform frame. Mount angles are clockwise.
pub fn sensor_to_platform(pose: &SensorPose<f64>) -> Isometry2<f64> {
    let origin = Vector2::new(pose.l * (-pose.alpha).cos(), pose.l * (-pose.alpha).sin());
    Isometry2::new(origin, -(pose.alpha + pose.beta))
}

/// Sensor-frame point of a horizontal-plane polar coordinate with azimuth
/// positive to the right.
pub fn polar_point(r: f64, theta: f64) -> Point2<f64> {
    Point2::new(r * theta.cos(), -r * theta.sin())
}

/// `(r, theta)` of a sensor-frame point, azimuth positive to the right.
pub fn point_polar(p: &Point2<f64>) -> (f64, f64) {
    (p.coords.norm(), (-p.y).atan2(p.x))
}

/// Platform pose after driving `(v, omega)` for `t` seconds from the origin
/// facing +x, as a platform-to-world isometry.
pub fn platform_after(v: f64, omega: f64, t: f64) -> Isometry2<f64> {
    let h = omega * t;
    let (x, y) = if omega.abs() < 1e-15 {
        (v * t, 0.0)
    } else {
        (v / omega * h.sin(), v / omega * (1.0 - h.cos()))
    };
    Isometry2::new(Vector2::new(x, y), h)
}

/// Finite-difference `(dr/dt, dtheta/dt)` of a world-fixed reflector that sits
/// at sensor polar `(r, theta)` at `t = 0`, on the upper (`phi = +pi/2`)
/// branch.
pub fn fd_flow(pose: &SensorPose<f64>, v: f64, omega: f64, r: f64, theta: f64) -> (f64, f64) {
    let mount = sensor_to_platform(pose);
    let world = mount * polar_point(r, theta);
    let at = |t: f64| {
        let sensor_from_world = (platform_after(v, omega, t) * mount).inverse();
        point_polar(&(sensor_from_world * world))
    };
    let h = 1e-5;
    let (r1, t1) = at(h);
    let (r0, t0) = at(-h);
    let (r2, t2) = at(2.0 * h);
    let (rm2, tm2) = at(-2.0 * h);
    // Fourth-order central difference.
    let d = |f2: f64, f1: f64, f0: f64, fm2: f64| (-f2 + 8.0 * f1 - 8.0 * f0 + fm2) / (12.0 * h);
    (d(r2, r1, r0, rm2), d(t2, t1, t0, tm2))
}

pub fn random_pose(rng: &mut impl Rng) -> SensorPose<f64> {
    SensorPose::new(
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        rng.gen_range(0.0..0.25),
    )
    .unwrap()
}

pub fn random_azimuth(rng: &mut impl Rng) -> f64 {
    rng.gen_range(-FRAC_PI_2 * 0.98..FRAC_PI_2 * 0.98)
}

/// Region membership recomputed from the shape definitions, boundaries
/// inclusive with a 1e-9 slack.
pub fn region_contains(region: &ControlRegion<f64>, p: &Point2<f64>) -> bool {
    const TOL: f64 = 1e-9;
    let within = |v: f64, lo: f64, hi: f64| (lo - TOL..=hi + TOL).contains(&v);
    match *region {
        ControlRegion::Circle { center, radius } => {
            (p - Point2::new(center[0], center[1])).norm() <= radius + TOL
        }
        ControlRegion::Rectangle { x, y } => within(p.x, x[0], x[1]) && within(p.y, y[0], y[1]),
        ControlRegion::Trapezoid {
            near_half_width,
            far_half_width,
            length,
            forward_offset,
        } => {
            let s = (p.x - forward_offset).clamp(0.0, length);
            within(p.x - forward_offset, 0.0, length)
                && p.y.abs()
                    <= near_half_width + (far_half_width - near_half_width) * s / length + TOL
        }
        ControlRegion::Wedge { bearing, range } => {
            let (r, b) = point_polar(p);
            within(r, range[0], range[1]) && within(b, bearing[0], bearing[1])
        }
    }
}

/// Brute-force ternary mask: +1 left, -1 right, 0 on the axis or outside.
pub fn oracle_mask(
    regions: &[ControlRegion<f64>],
    pose: &SensorPose<f64>,
    spec: &GridSpec<f64>,
) -> Vec<i8> {
    let mount = sensor_to_platform(pose);
    let n_az = spec.n_azimuth();
    let mut out = vec![0i8; spec.n_range * n_az];
    for i in 0..spec.n_range {
        let r = (i as f64 + 0.5) * spec.r_max / spec.n_range as f64;
        for k in 0..n_az {
            let theta = spec.azimuth_min + k as f64 * spec.azimuth_step;
            let p = mount * polar_point(r, theta);
            if regions.iter().any(|reg| region_contains(reg, &p)) {
                out[i * n_az + k] = if p.y > 1e-9 {
                    1
                } else if p.y < -1e-9 {
                    -1
                } else {
                    0
                };
            }
        }
    }
    out
}

/// Cells visited by densely sampling the platform line `y = d`. Azimuth bins
/// are centred on their rays and the fan is closed at its edges.
pub fn oracle_raster(
    pose: &SensorPose<f64>,
    d: f64,
    spec: &GridSpec<f64>,
    step: f64,
) -> BTreeSet<(usize, usize)> {
    let to_sensor = sensor_to_platform(pose).inverse();
    let reach = spec.r_max + pose.l + 0.01;
    let n = (2.0 * reach / step).ceil() as usize;
    let dr = spec.r_max / spec.n_range as f64;
    let mut cells = BTreeSet::new();
    for s in 0..=n {
        let x = -reach + s as f64 * step;
        let (r, theta) = point_polar(&(to_sensor * Point2::new(x, d)));
        if r > spec.r_max || r < 1e-3 || theta < spec.azimuth_min || theta > spec.azimuth_max {
            continue;
        }
        let i = ((r / dr) as usize).min(spec.n_range - 1);
        let k = ((theta - spec.azimuth_min) / spec.azimuth_step).round() as usize;
        cells.insert((i, k));
    }
    cells
}

/// How deeply the platform line `y = d` cuts into a cell: the smaller of the
/// largest excursions of the cell on either side of the line, sampled on a
/// 21x21 lattice. Zero or tiny means the line at most grazes the cell.
pub fn line_cell_overlap(
    pose: &SensorPose<f64>,
    d: f64,
    spec: &GridSpec<f64>,
    cell: (usize, usize),
) -> f64 {
    let mount = sensor_to_platform(pose);
    let dr = spec.r_max / spec.n_range as f64;
    let (r0, r1) = (cell.0 as f64 * dr, (cell.0 + 1) as f64 * dr);
    let c = spec.azimuth_min + cell.1 as f64 * spec.azimuth_step;
    let t0 = (c - spec.azimuth_step / 2.0).max(spec.azimuth_min);
    let t1 = (c + spec.azimuth_step / 2.0).min(spec.azimuth_max);
    let mut above: f64 = 0.0;
    let mut below: f64 = 0.0;
    for a in 0..=20 {
        let r = r0 + (r1 - r0) * a as f64 / 20.0;
        for b in 0..=20 {
            let t = t0 + (t1 - t0) * b as f64 / 20.0;
            let y = (mount * polar_point(r, t)).y - d;
            above = above.max(y);
            below = below.min(y);
        }
    }
    above.min(-below)
}
