//! Geometric sonar simulation: world model, echo sources, occlusion and
//! energyscape rendering.
//!
//! Echoes are not synthesised from microphone signals. Each acoustically
//! relevant point of the scene becomes a source with a type-dependent
//! strength, sources hidden from the sensor are dropped, and the survivors are
//! splatted into the polar grid with a Gaussian azimuth spread and a range
//! falloff.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energyscape::{Energyscape, GridSpec};
use crate::error::{Error, Result};
use crate::flow::MIN_RANGE;
use crate::scalar::{wrap_angle, Scalar};

/// Wall segment between two world points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment<T>(pub [[T; 2]; 2]);

impl<T: Scalar> Segment<T> {
    pub fn new(a: [T; 2], b: [T; 2]) -> Self {
        Self([a, b])
    }

    pub fn a(&self) -> [T; 2] {
        self.0[0]
    }

    pub fn b(&self) -> [T; 2] {
        self.0[1]
    }

    pub fn length(&self) -> T {
        dist(self.a(), self.b())
    }

    /// Parameter of the orthogonal projection of `p` onto the supporting line.
    pub fn project(&self, p: [T; 2]) -> T {
        let d = sub(self.b(), self.a());
        let len2 = dot(d, d);
        if len2 == T::zero() {
            return T::zero();
        }
        dot(sub(p, self.a()), d) / len2
    }

    pub fn point_at(&self, u: T) -> [T; 2] {
        let d = sub(self.b(), self.a());
        [self.a()[0] + u * d[0], self.a()[1] + u * d[1]]
    }

    /// Closest point of the segment to `p`.
    pub fn closest_point(&self, p: [T; 2]) -> [T; 2] {
        self.point_at(self.project(p).max(T::zero()).min(T::one()))
    }

    pub fn mirrored_y(&self) -> Self {
        Self([[self.0[0][0], -self.0[0][1]], [self.0[1][0], -self.0[1][1]]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle<T> {
    pub center: [T; 2],
    pub radius: T,
}

/// Circular object moving along a piecewise-linear schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingObject<T> {
    pub radius: T,
    /// `(time, x, y)` knots with strictly increasing time.
    pub path: Vec<[T; 3]>,
    /// Repeat the schedule; requires the last knot to return to the first
    /// position.
    #[serde(default)]
    pub cyclic: bool,
}

impl<T: Scalar> MovingObject<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > T::zero()) || self.path.is_empty() {
            return Err(Error::DegenerateWorld(
                "mover needs a positive radius and a path".into(),
            ));
        }
        if self.path.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateWorld("mover path must be finite".into()));
        }
        if self.path.windows(2).any(|w| !(w[1][0] > w[0][0])) {
            return Err(Error::DegenerateWorld(
                "mover knot times must increase".into(),
            ));
        }
        if self.cyclic {
            let (f, l) = (self.path[0], self.path[self.path.len() - 1]);
            if self.path.len() < 2 || dist([f[1], f[2]], [l[1], l[2]]) > T::lit(1e-9) {
                return Err(Error::DegenerateWorld(
                    "cyclic mover path must be closed".into(),
                ));
            }
        }
        Ok(())
    }

    /// Position at time `t`; held at the end knots outside the schedule.
    pub fn position_at(&self, t: T) -> [T; 2] {
        let first = self.path[0];
        let last = self.path[self.path.len() - 1];
        let mut t = t;
        if self.cyclic && self.path.len() > 1 {
            let period = last[0] - first[0];
            if t > first[0] {
                t = first[0] + (t - first[0]) % period;
            }
        }
        if t <= first[0] {
            return [first[1], first[2]];
        }
        if t >= last[0] {
            return [last[1], last[2]];
        }
        let i = self.path.partition_point(|k| k[0] <= t);
        let (k0, k1) = (self.path[i - 1], self.path[i]);
        let s = (t - k0[0]) / (k1[0] - k0[0]);
        [k0[1] + s * (k1[1] - k0[1]), k0[2] + s * (k1[2] - k0[2])]
    }

    pub fn circle_at(&self, t: T) -> Circle<T> {
        Circle {
            center: self.position_at(t),
            radius: self.radius,
        }
    }
}

/// Axis-aligned rectangle from which run start positions are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartZone<T> {
    pub min: [T; 2],
    pub max: [T; 2],
}

/// Static and moving geometry of the simulated environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel<T> {
    #[serde(default)]
    pub walls: Vec<Segment<T>>,
    /// Convenience input: open polylines expanded into consecutive walls on
    /// load.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub polylines: Vec<Vec<[T; 2]>>,
    #[serde(default)]
    pub circles: Vec<Circle<T>>,
    #[serde(default)]
    pub movers: Vec<MovingObject<T>>,
    #[serde(default)]
    pub waypoints: Vec<[T; 2]>,
    pub start_zone: StartZone<T>,
}

impl<T: Scalar + serde::de::DeserializeOwned> WorldModel<T> {
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self> {
        let mut w: Self = serde_json::from_str(text).map_err(|source| Error::Json {
            path: origin.to_string(),
            source,
        })?;
        w.expand_polylines();
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text, &path.display().to_string())
    }
}

impl<T: Scalar> WorldModel<T> {
    pub fn empty(start_zone: StartZone<T>) -> Self {
        Self {
            walls: Vec::new(),
            polylines: Vec::new(),
            circles: Vec::new(),
            movers: Vec::new(),
            waypoints: Vec::new(),
            start_zone,
        }
    }

    pub fn expand_polylines(&mut self) {
        for line in std::mem::take(&mut self.polylines) {
            for w in line.windows(2) {
                self.walls.push(Segment::new(w[0], w[1]));
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        for w in &self.walls {
            if w.0.iter().flatten().any(|v| !v.is_finite()) || w.length() == T::zero() {
                return Err(Error::DegenerateWorld(format!(
                    "wall {:?} is not a finite segment",
                    w.0
                )));
            }
        }
        for c in &self.circles {
            if !(c.radius > T::zero()) || !c.center[0].is_finite() || !c.center[1].is_finite() {
                return Err(Error::DegenerateWorld(
                    "circle needs finite centre and positive radius".into(),
                ));
            }
        }
        for m in &self.movers {
            m.validate()?;
        }
        let z = &self.start_zone;
        if !(z.max[0] >= z.min[0] && z.max[1] >= z.min[1]) {
            return Err(Error::DegenerateWorld(
                "start zone max must not be below min".into(),
            ));
        }
        Ok(())
    }

    /// Static circles plus movers at time `t`.
    pub fn circles_at(&self, t: T) -> Vec<Circle<T>> {
        self.circles
            .iter()
            .copied()
            .chain(self.movers.iter().map(|m| m.circle_at(t)))
            .collect()
    }

    /// Endpoints shared by two or more walls.
    pub fn junctions(&self, tolerance: T) -> Vec<[T; 2]> {
        let ends: Vec<[T; 2]> = self.walls.iter().flat_map(|w| [w.a(), w.b()]).collect();
        let mut out: Vec<[T; 2]> = Vec::new();
        for (i, p) in ends.iter().enumerate() {
            let shared = ends
                .iter()
                .enumerate()
                .any(|(j, q)| j / 2 != i / 2 && dist(*p, *q) <= tolerance);
            if shared && !out.iter().any(|q| dist(*p, *q) <= tolerance) {
                out.push(*p);
            }
        }
        out
    }

    /// World mirrored about the x-axis.
    pub fn mirrored_y(&self) -> Self {
        let m = |p: [T; 2]| [p[0], -p[1]];
        Self {
            walls: self.walls.iter().map(Segment::mirrored_y).collect(),
            polylines: self
                .polylines
                .iter()
                .map(|l| l.iter().map(|p| m(*p)).collect())
                .collect(),
            circles: self
                .circles
                .iter()
                .map(|c| Circle {
                    center: m(c.center),
                    radius: c.radius,
                })
                .collect(),
            movers: self
                .movers
                .iter()
                .map(|mv| MovingObject {
                    radius: mv.radius,
                    path: mv.path.iter().map(|k| [k[0], k[1], -k[2]]).collect(),
                    cyclic: mv.cyclic,
                })
                .collect(),
            waypoints: self.waypoints.iter().map(|p| m(*p)).collect(),
            start_zone: StartZone {
                min: [self.start_zone.min[0], -self.start_zone.max[1]],
                max: [self.start_zone.max[0], -self.start_zone.min[1]],
            },
        }
    }
}

/// Sensor origin and axis direction in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame<T> {
    pub position: [T; 2],
    /// Direction of the sensor axis, counter-clockwise from world x.
    pub heading: T,
}

impl<T: Scalar> SensorFrame<T> {
    /// Range and azimuth (positive to the sensor's right) of a world point.
    pub fn to_polar(&self, p: [T; 2]) -> (T, T) {
        let d = sub(p, self.position);
        let r = d[0].hypot(d[1]);
        (r, wrap_angle(self.heading - d[1].atan2(d[0])))
    }

    pub fn to_world(&self, r: T, theta: T) -> [T; 2] {
        let a = self.heading - theta;
        [
            self.position[0] + r * a.cos(),
            self.position[1] + r * a.sin(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EchoKind {
    PlaneFoot,
    Edge,
    Corner,
    Circle,
    /// Weak diffuse backscatter from wall texture.
    Scatter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoSource<T> {
    pub kind: EchoKind,
    pub position: [T; 2],
    pub strength: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SonarConfig<T> {
    pub plane_strength: T,
    pub circle_strength: T,
    pub corner_strength: T,
    pub edge_strength: T,
    /// Strength of wall-texture scatter points; zero disables them.
    pub scatter_strength: T,
    /// Spacing of wall-texture scatter points along each wall, meters.
    pub scatter_spacing: T,
    /// Standard deviation of the azimuth point spread, radians.
    pub psf_sigma: T,
    /// Standard deviation of the range point spread, meters; zero deposits
    /// each echo in a single range bin.
    pub range_sigma: T,
    pub r_ref: T,
    /// Amplitude falls as `(r_ref / r)^falloff_exponent`, capped at 1.
    pub falloff_exponent: T,
    /// Half-width of the zero-mean uniform per-cell noise.
    pub noise_amplitude: T,
    pub junction_tolerance: T,
}

impl<T: Scalar> Default for SonarConfig<T> {
    fn default() -> Self {
        Self {
            plane_strength: T::one(),
            circle_strength: T::lit(0.8),
            corner_strength: T::lit(0.6),
            edge_strength: T::lit(0.3),
            scatter_strength: T::lit(0.15),
            scatter_spacing: T::lit(0.05),
            psf_sigma: T::lit(3f64.to_radians()),
            range_sigma: T::zero(),
            r_ref: T::one(),
            falloff_exponent: T::one(),
            noise_amplitude: T::lit(0.02),
            junction_tolerance: T::lit(1e-6),
        }
    }
}

impl<T: Scalar> SonarConfig<T> {
    /// Only the point-like echo types: plane feet, edges, corners, circles.
    pub fn without_scatter(mut self) -> Self {
        self.scatter_strength = T::zero();
        self
    }

    pub fn noiseless(mut self) -> Self {
        self.noise_amplitude = T::zero();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            self.plane_strength,
            self.circle_strength,
            self.corner_strength,
            self.edge_strength,
            self.scatter_strength,
            self.range_sigma,
            self.noise_amplitude,
        ];
        if non_negative.iter().any(|v| !(*v >= T::zero())) {
            return Err(Error::Config(
                "sonar strengths, range_sigma and noise must be >= 0".into(),
            ));
        }
        if !(self.psf_sigma > T::zero()
            && self.r_ref > T::zero()
            && self.scatter_spacing > T::zero())
        {
            return Err(Error::Config(
                "psf_sigma, r_ref and scatter_spacing must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn visible<T: Scalar>(frame: &SensorFrame<T>, spec: &GridSpec<T>, p: [T; 2]) -> bool {
    let (r, th) = frame.to_polar(p);
    r >= T::lit(MIN_RANGE) && r <= spec.r_max && th >= spec.azimuth_min && th <= spec.azimuth_max
}

/// Candidate echo sources for one sensor at time `t`, limited to the sensor's
/// range and field of view. Occlusion is not applied here.
pub fn extract_echo_sources<T: Scalar>(
    world: &WorldModel<T>,
    frame: &SensorFrame<T>,
    t: T,
    cfg: &SonarConfig<T>,
    spec: &GridSpec<T>,
) -> Vec<EchoSource<T>> {
    let junctions = world.junctions(cfg.junction_tolerance);
    let is_junction = |p: [T; 2]| {
        junctions
            .iter()
            .any(|q| dist(p, *q) <= cfg.junction_tolerance)
    };
    let mut out = Vec::new();
    let mut push = |kind, position, strength: T| {
        if strength > T::zero() && visible(frame, spec, position) {
            out.push(EchoSource {
                kind,
                position,
                strength,
            });
        }
    };
    for w in &world.walls {
        let u = w.project(frame.position);
        if u >= T::zero() && u <= T::one() {
            push(EchoKind::PlaneFoot, w.point_at(u), cfg.plane_strength);
        } else {
            for end in [w.a(), w.b()] {
                if !is_junction(end) {
                    push(EchoKind::Edge, end, cfg.edge_strength);
                }
            }
        }
    }
    for j in &junctions {
        push(EchoKind::Corner, *j, cfg.corner_strength);
    }
    for c in world.circles_at(t) {
        let d = sub(frame.position, c.center);
        let n = d[0].hypot(d[1]);
        if n > c.radius {
            let p = [
                c.center[0] + c.radius * d[0] / n,
                c.center[1] + c.radius * d[1] / n,
            ];
            push(EchoKind::Circle, p, cfg.circle_strength);
        }
    }
    if cfg.scatter_strength > T::zero() {
        for w in &world.walls {
            let len = w.length();
            let n = (len / cfg.scatter_spacing).floor().to_usize().unwrap_or(0);
            let reach = spec.r_max + len;
            if dist(frame.position, w.point_at(T::lit(0.5))) > reach {
                continue;
            }
            for k in 0..n {
                let s = (T::from_usize_lossy(k) + T::lit(0.5)) * cfg.scatter_spacing;
                push(EchoKind::Scatter, w.point_at(s / len), cfg.scatter_strength);
            }
        }
    }
    out
}

/// Whether the straight path from `from` to `to` crosses any geometry
/// strictly between its endpoints.
pub fn line_of_sight_blocked<T: Scalar>(
    from: [T; 2],
    to: [T; 2],
    walls: &[Segment<T>],
    circles: &[Circle<T>],
) -> bool {
    let eps = T::lit(1e-9);
    let d = sub(to, from);
    let len = d[0].hypot(d[1]);
    if len == T::zero() {
        return false;
    }
    // Ignore contacts within a micrometre of either end.
    let margin = T::lit(1e-6) / len;
    for w in walls {
        let e = sub(w.b(), w.a());
        let denom = cross(d, e);
        if denom.abs() <= eps * len * w.length() {
            continue;
        }
        let q = sub(w.a(), from);
        let s = cross(q, e) / denom;
        let u = cross(q, d) / denom;
        if s > margin && s < T::one() - margin && u >= T::zero() && u <= T::one() {
            return true;
        }
    }
    for c in circles {
        let q = sub(c.center, from);
        let s = (dot(q, d) / (len * len))
            .max(T::zero())
            .min(T::one() - margin);
        let closest = [from[0] + s * d[0], from[1] + s * d[1]];
        if dist(closest, c.center) < c.radius - eps {
            return true;
        }
    }
    false
}

/// Drops every source whose line of sight to the sensor is obstructed.
pub fn occlusion_filter<T: Scalar>(
    sources: &[EchoSource<T>],
    world: &WorldModel<T>,
    frame: &SensorFrame<T>,
    t: T,
) -> Vec<EchoSource<T>> {
    let circles = world.circles_at(t);
    sources
        .iter()
        .filter(|s| !line_of_sight_blocked(frame.position, s.position, &world.walls, &circles))
        .copied()
        .collect()
}

/// Splats sources into a polar energyscape and adds seeded uniform noise.
pub fn render_energyscape<T: Scalar>(
    sources: &[EchoSource<T>],
    frame: &SensorFrame<T>,
    spec: &GridSpec<T>,
    cfg: &SonarConfig<T>,
    sensor_index: usize,
    noise_seed: u64,
) -> Energyscape<T> {
    let mut e = Energyscape::zeros(*spec, sensor_index);
    let n_az = spec.n_azimuth();
    let two = T::lit(2.0);
    // Slightly past 4σ so bins exactly at the cut are kept on both sides.
    let az_reach = T::lit(4.0 * (1.0 + 1e-9)) * cfg.psf_sigma;
    let inv_2s2 = T::one() / (two * cfg.psf_sigma * cfg.psf_sigma);
    let dr = spec.range_step();
    let range_reach = if cfg.range_sigma > T::zero() {
        (T::lit(3.0) * cfg.range_sigma / dr)
            .ceil()
            .to_usize()
            .unwrap_or(0)
    } else {
        0
    };
    let range_kernel: Vec<T> = (0..=range_reach)
        .map(|k| {
            if k == 0 {
                T::one()
            } else {
                let x = T::from_usize_lossy(k) * dr;
                (-(x * x) / (two * cfg.range_sigma * cfg.range_sigma)).exp()
            }
        })
        .collect();
    let mut az_weights: Vec<(usize, T)> = Vec::with_capacity(64);

    for s in sources {
        let (r, th) = frame.to_polar(s.position);
        let Some(i0) = spec.range_index(r) else {
            continue;
        };
        if r < T::lit(MIN_RANGE) {
            continue;
        }
        let gain = (cfg.r_ref / r).powf(cfg.falloff_exponent).min(T::one());
        let amp = s.strength * gain;
        let lo = ((th - az_reach - spec.azimuth_min) / spec.azimuth_step)
            .ceil()
            .max(T::zero());
        let hi = ((th + az_reach - spec.azimuth_min) / spec.azimuth_step).floor();
        let (Some(lo), Some(hi)) = (lo.to_usize(), hi.to_isize()) else {
            continue;
        };
        if hi < 0 {
            continue;
        }
        let hi = (hi as usize).min(n_az - 1);
        az_weights.clear();
        for k in lo..=hi {
            let dth = spec.azimuth_center(k) - th;
            az_weights.push((k, (-(dth * dth) * inv_2s2).exp()));
        }
        for (off, rk) in range_kernel.iter().enumerate() {
            let rows: &[Option<usize>] = if off == 0 {
                &[Some(i0), None]
            } else {
                &[
                    i0.checked_sub(off),
                    Some(i0 + off).filter(|i| *i < spec.n_range),
                ]
            };
            for i in rows.iter().flatten() {
                let base = i * n_az;
                for &(k, w) in &az_weights {
                    let c = &mut e.cells[base + k];
                    *c = *c + amp * *rk * w;
                }
            }
        }
    }

    if cfg.noise_amplitude > T::zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        for c in e.cells.iter_mut() {
            let u: f64 = rng.gen();
            *c = *c + cfg.noise_amplitude * T::lit(2.0 * u - 1.0);
        }
    }
    for c in e.cells.iter_mut() {
        if *c < T::zero() {
            *c = T::zero();
        }
    }
    e
}

/// Extract, occlude and render in one call.
pub fn simulate_energyscape<T: Scalar>(
    world: &WorldModel<T>,
    frame: &SensorFrame<T>,
    t: T,
    cfg: &SonarConfig<T>,
    spec: &GridSpec<T>,
    sensor_index: usize,
    noise_seed: u64,
) -> Energyscape<T> {
    let sources = extract_echo_sources(world, frame, t, cfg, spec);
    let visible = occlusion_filter(&sources, world, frame, t);
    render_energyscape(&visible, frame, spec, cfg, sensor_index, noise_seed)
}

#[inline]
pub(crate) fn sub<T: Scalar>(a: [T; 2], b: [T; 2]) -> [T; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: [T; 2], b: [T; 2]) -> T {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
fn cross<T: Scalar>(a: [T; 2], b: [T; 2]) -> T {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub(crate) fn dist<T: Scalar>(a: [T; 2], b: [T; 2]) -> T {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
