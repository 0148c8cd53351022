//! Polar energyscape grids, control-region masks and flow-line rasters.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{SensorPose, MIN_RANGE};
use crate::scalar::Scalar;

/// Lateral band around the platform x-axis whose cells belong to neither side.
pub const AXIS_BAND: f64 = 1e-9;
/// Slack on region boundaries (meters or radians). Integer-degree mounts on a
/// 1-degree grid put cell centres exactly on wedge edges; without slack the
/// rounding decides membership differently on the two sides.
pub const REGION_TOL: f64 = 1e-9;

/// Polar grid layout shared by energyscapes, masks and rasters.
///
/// Range bin `i` covers `[i dr, (i + 1) dr)` with `dr = r_max / n_range` and
/// is represented by its centre. Azimuth bin `k` is centred on
/// `azimuth_min + k * azimuth_step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec<T> {
    pub r_max: T,
    pub n_range: usize,
    pub azimuth_min: T,
    pub azimuth_max: T,
    pub azimuth_step: T,
}

impl<T: Scalar> Default for GridSpec<T> {
    fn default() -> Self {
        Self {
            r_max: T::lit(5.0),
            n_range: 200,
            azimuth_min: -T::FRAC_PI_2(),
            azimuth_max: T::FRAC_PI_2(),
            azimuth_step: T::one().to_radians(),
        }
    }
}

impl<T: Scalar> GridSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_range < 2 || !(self.r_max > T::zero()) || !(self.azimuth_step > T::zero()) {
            return Err(Error::Config(format!(
                "grid needs n_range >= 2, r_max > 0 and azimuth_step > 0 (got {}, {}, {})",
                self.n_range, self.r_max, self.azimuth_step
            )));
        }
        if !(self.azimuth_max > self.azimuth_min) {
            return Err(Error::Config(
                "grid azimuth_max must exceed azimuth_min".into(),
            ));
        }
        Ok(())
    }

    pub fn n_azimuth(&self) -> usize {
        ((self.azimuth_max - self.azimuth_min) / self.azimuth_step)
            .round()
            .to_usize()
            .unwrap_or(0)
            + 1
    }

    pub fn n_cells(&self) -> usize {
        self.n_range * self.n_azimuth()
    }

    #[inline]
    pub fn range_step(&self) -> T {
        self.r_max / T::from_usize_lossy(self.n_range)
    }

    #[inline]
    pub fn range_center(&self, i: usize) -> T {
        (T::from_usize_lossy(i) + T::lit(0.5)) * self.range_step()
    }

    #[inline]
    pub fn azimuth_center(&self, k: usize) -> T {
        self.azimuth_min + T::from_usize_lossy(k) * self.azimuth_step
    }

    pub fn range_index(&self, r: T) -> Option<usize> {
        if !(r >= T::zero()) || r > self.r_max {
            return None;
        }
        let i = (r / self.range_step()).floor().to_usize()?;
        Some(i.min(self.n_range - 1))
    }

    pub fn azimuth_index(&self, theta: T) -> Option<usize> {
        let k = ((theta - self.azimuth_min) / self.azimuth_step).round();
        if !(k >= T::zero()) {
            return None;
        }
        let k = k.to_usize()?;
        (k < self.n_azimuth()).then_some(k)
    }

    #[inline]
    pub fn index(&self, range_bin: usize, azimuth_bin: usize) -> usize {
        range_bin * self.n_azimuth() + azimuth_bin
    }

    /// Range and azimuth bins of a flat cell index.
    #[inline]
    pub fn bins(&self, idx: usize) -> (usize, usize) {
        let n = self.n_azimuth();
        (idx / n, idx % n)
    }
}

/// Echo energy per (range, azimuth) cell for one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Energyscape<T> {
    pub spec: GridSpec<T>,
    /// Row-major `[range][azimuth]`.
    pub cells: Vec<T>,
    pub sensor_index: usize,
}

impl<T: Scalar> Energyscape<T> {
    /// Copy with every cell at or below `floor` set to zero.
    pub fn gated(&self, floor: T) -> Self {
        Self {
            spec: self.spec,
            cells: self
                .cells
                .iter()
                .map(|&c| if c > floor { c } else { T::zero() })
                .collect(),
            sensor_index: self.sensor_index,
        }
    }

    pub fn zeros(spec: GridSpec<T>, sensor_index: usize) -> Self {
        Self {
            cells: vec![T::zero(); spec.n_cells()],
            spec,
            sensor_index,
        }
    }

    pub fn get(&self, range_bin: usize, azimuth_bin: usize) -> T {
        self.cells[self.spec.index(range_bin, azimuth_bin)]
    }

    /// Stores a value, clamping negatives to zero.
    pub fn set(&mut self, range_bin: usize, azimuth_bin: usize, value: T) {
        let idx = self.spec.index(range_bin, azimuth_bin);
        self.cells[idx] = value.max(T::zero());
    }

    pub fn max_value(&self) -> T {
        self.cells.iter().copied().fold(T::zero(), T::max)
    }

    /// Energyscape with the azimuth axis reversed.
    pub fn mirrored(&self) -> Self {
        let n = self.spec.n_azimuth();
        let mut out = self.clone();
        for i in 0..self.spec.n_range {
            for k in 0..n {
                out.cells[self.spec.index(i, k)] = self.cells[self.spec.index(i, n - 1 - k)];
            }
        }
        out
    }
}

/// The four control behaviours, lowest layer first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Layer {
    #[serde(rename = "CA")]
    CollisionAvoidance,
    #[serde(rename = "OA")]
    ObstacleAvoidance,
    #[serde(rename = "RCF")]
    CorridorFollowing,
    #[serde(rename = "AFF")]
    FlowFollowing,
}

impl Layer {
    pub const ALL: [Layer; 4] = [
        Layer::CollisionAvoidance,
        Layer::ObstacleAvoidance,
        Layer::CorridorFollowing,
        Layer::FlowFollowing,
    ];

    pub fn short_name(&self) -> &'static str {
        match self {
            Layer::CollisionAvoidance => "CA",
            Layer::ObstacleAvoidance => "OA",
            Layer::CorridorFollowing => "RCF",
            Layer::FlowFollowing => "AFF",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Primitive region in the platform frame (`x` forward, `y` left, meters).
///
/// Wedge bearings follow the sensor azimuth sense: positive to the right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ControlRegion<T> {
    Circle {
        center: [T; 2],
        radius: T,
    },
    Rectangle {
        x: [T; 2],
        y: [T; 2],
    },
    /// Symmetric about the x-axis, opening from `near_half_width` at
    /// `x = forward_offset` to `far_half_width` at `x = forward_offset + length`.
    Trapezoid {
        near_half_width: T,
        far_half_width: T,
        length: T,
        forward_offset: T,
    },
    Wedge {
        bearing: [T; 2],
        range: [T; 2],
    },
}

impl<T: Scalar> ControlRegion<T> {
    pub fn contains(&self, p: [T; 2]) -> bool {
        let tol = T::lit(REGION_TOL);
        let within = |v: T, lo: T, hi: T| v >= lo - tol && v <= hi + tol;
        match *self {
            ControlRegion::Circle { center, radius } => {
                (p[0] - center[0]).hypot(p[1] - center[1]) <= radius + tol
            }
            ControlRegion::Rectangle { x, y } => {
                within(p[0], x[0], x[1]) && within(p[1], y[0], y[1])
            }
            ControlRegion::Trapezoid {
                near_half_width,
                far_half_width,
                length,
                forward_offset,
            } => {
                let s = p[0] - forward_offset;
                if !within(s, T::zero(), length) {
                    return false;
                }
                let s = s.max(T::zero()).min(length);
                let hw = near_half_width + (far_half_width - near_half_width) * s / length;
                p[1].abs() <= hw + tol
            }
            ControlRegion::Wedge { bearing, range } => {
                let r = p[0].hypot(p[1]);
                let b = (-p[1]).atan2(p[0]);
                within(r, range[0], range[1]) && within(b, bearing[0], bearing[1])
            }
        }
    }

    /// Region mirrored about the platform x-axis.
    pub fn mirrored(&self) -> Self {
        match *self {
            ControlRegion::Circle { center, radius } => ControlRegion::Circle {
                center: [center[0], -center[1]],
                radius,
            },
            ControlRegion::Rectangle { x, y } => ControlRegion::Rectangle {
                x,
                y: [-y[1], -y[0]],
            },
            t @ ControlRegion::Trapezoid { .. } => t,
            ControlRegion::Wedge { bearing, range } => ControlRegion::Wedge {
                bearing: [-bearing[1], -bearing[0]],
                range,
            },
        }
    }
}

/// Per-cell `{-1, 0, +1}` selection of a control region for one sensor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TernaryMask<T> {
    pub spec: GridSpec<T>,
    pub cells: Vec<i8>,
    pub layer: Layer,
    pub sensor_index: usize,
    /// Flat indices of non-zero cells in ascending order.
    #[serde(skip)]
    active: Vec<u32>,
}

fn nonzero_indices(cells: &[i8]) -> Vec<u32> {
    cells
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0)
        .map(|(i, _)| i as u32)
        .collect()
}

impl<T: Scalar> TernaryMask<T> {
    pub fn from_cells(
        spec: GridSpec<T>,
        cells: Vec<i8>,
        layer: Layer,
        sensor_index: usize,
    ) -> Result<Self> {
        if cells.len() != spec.n_cells() {
            return Err(Error::SpecMismatch);
        }
        if let Some(v) = cells.iter().find(|v| !(-1..=1).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "ternary mask value {v} outside {{-1, 0, 1}}"
            )));
        }
        let active = nonzero_indices(&cells);
        Ok(Self {
            spec,
            cells,
            layer,
            sensor_index,
            active,
        })
    }

    pub fn get(&self, range_bin: usize, azimuth_bin: usize) -> i8 {
        self.cells[self.spec.index(range_bin, azimuth_bin)]
    }

    pub fn active_cells(&self) -> &[u32] {
        &self.active
    }

    pub fn count_nonzero(&self) -> usize {
        self.active.len()
    }
}

/// Builds the ternary mask of a region (union of primitives) for one sensor.
///
/// Each cell is classified by its centre: 0 outside the region, +1 when the
/// centre lies on the platform's left, -1 on its right. Centres within
/// [`AXIS_BAND`] of the platform x-axis have no side and are left at 0.
pub fn build_region_mask<T: Scalar>(
    regions: &[ControlRegion<T>],
    pose: &SensorPose<T>,
    spec: &GridSpec<T>,
    layer: Layer,
    sensor_index: usize,
) -> TernaryMask<T> {
    let n_az = spec.n_azimuth();
    let mut cells = vec![0i8; spec.n_cells()];
    let band = T::lit(AXIS_BAND);
    for i in 0..spec.n_range {
        let r = spec.range_center(i);
        for k in 0..n_az {
            let p = pose.to_platform(r, spec.azimuth_center(k));
            if regions.iter().any(|reg| reg.contains(p)) {
                cells[i * n_az + k] = if p[1] > band {
                    1
                } else if p[1] < -band {
                    -1
                } else {
                    0
                };
            }
        }
    }
    TernaryMask {
        spec: *spec,
        active: nonzero_indices(&cells),
        cells,
        layer,
        sensor_index,
    }
}

/// Cells crossed by the straight-motion flow-line of a wall parallel to the
/// platform x-axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct RasterFlowLine<T> {
    pub spec: GridSpec<T>,
    /// `(range_bin, azimuth_bin)` in order along the wall.
    pub cells: Vec<(usize, usize)>,
    /// Signed lateral distance of the wall, left positive, meters.
    pub d: T,
    pub sensor_index: usize,
}

impl<T: Scalar> RasterFlowLine<T> {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Flow invariant shared by every reflector of a wall at lateral distance `d`
/// (left positive) from the platform's path.
pub fn wall_invariant<T: Scalar>(pose: &SensorPose<T>, d: T) -> T {
    -(d - pose.origin_in_platform()[1])
}

/// Rasterises the flow-line of a wall at lateral distance `d`.
///
/// Under straight motion every reflector on that wall shares the flow
/// invariant `C = r sin(theta + delta)` returned by [`wall_invariant`]; the
/// flow-line is the curve `r = C / sin(theta + delta)`, a straight line in the
/// sensor's Cartesian frame. The cells are found exactly by splitting the
/// curve at every range-ring and azimuth-ray crossing and classifying each
/// piece by its midpoint.
pub fn rasterize_flow_line<T: Scalar>(
    pose: &SensorPose<T>,
    d: T,
    spec: &GridSpec<T>,
    sensor_index: usize,
) -> Result<RasterFlowLine<T>> {
    if d == T::zero() || !d.is_finite() {
        return Err(Error::InvalidArgument(
            "lateral distance must be non-zero".into(),
        ));
    }
    let empty = || Error::EmptyRaster {
        d: d.to_f64_lossy(),
        sensor_index,
    };
    let c = wall_invariant(pose, d);
    // Sensor-frame Cartesian, x along the axis and y to the left. Travel
    // direction u sits at azimuth -delta; n is its left normal.
    let (sd, cd) = pose.delta().sin_cos();
    let u = [cd, sd];
    let n = [-sd, cd];
    // Points with azimuth-convention offset C lie at lateral (left) offset -C.
    let off = -c;
    let foot = [off * n[0], off * n[1]];
    let r_max = spec.r_max;
    if off.abs() >= r_max {
        return Err(empty());
    }
    let half = (r_max * r_max - off * off).sqrt();

    let mut breaks: Vec<T> = vec![-half, half];
    let dr = spec.range_step();
    for i in 1..spec.n_range {
        let rho = T::from_usize_lossy(i) * dr;
        if rho > off.abs() {
            let s = (rho * rho - off * off).sqrt();
            breaks.push(s);
            breaks.push(-s);
        }
    }
    let n_az = spec.n_azimuth();
    let half_step = spec.azimuth_step / T::lit(2.0);
    let mut rays: Vec<T> = (1..n_az)
        .map(|k| spec.azimuth_center(k) - half_step)
        .collect();
    rays.push(spec.azimuth_min);
    rays.push(spec.azimuth_max);
    for phi in rays {
        let w = [phi.cos(), -phi.sin()];
        let nw = n[0] * w[0] + n[1] * w[1];
        if nw.abs() <= T::epsilon() {
            continue;
        }
        let t = off / nw;
        if t > T::zero() {
            breaks.push(u[0] * t * w[0] + u[1] * t * w[1]);
        }
    }
    breaks.retain(|s| s.abs() <= half);
    breaks.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));

    let mut cells: Vec<(usize, usize)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for w in breaks.windows(2) {
        if w[1] - w[0] <= T::zero() {
            continue;
        }
        let s = (w[0] + w[1]) / T::lit(2.0);
        let p = [foot[0] + s * u[0], foot[1] + s * u[1]];
        let r = p[0].hypot(p[1]);
        let theta = (-p[1]).atan2(p[0]);
        if r < T::lit(MIN_RANGE)
            || r > r_max
            || theta < spec.azimuth_min
            || theta > spec.azimuth_max
        {
            continue;
        }
        if let (Some(i), Some(k)) = (spec.range_index(r), spec.azimuth_index(theta)) {
            if seen.insert((i, k)) {
                cells.push((i, k));
            }
        }
    }
    if cells.is_empty() {
        return Err(empty());
    }
    Ok(RasterFlowLine {
        spec: *spec,
        cells,
        d,
        sensor_index,
    })
}

/// `sum E * M` over all cells.
pub fn masked_sum<T: Scalar>(e: &Energyscape<T>, m: &TernaryMask<T>) -> Result<T> {
    if e.spec != m.spec {
        return Err(Error::SpecMismatch);
    }
    Ok(masked_sums(e, m).signed)
}

/// The three sums the avoidance laws need from one (energyscape, mask) pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MaskedSums<T> {
    /// `sum E * M`
    pub signed: T,
    /// `sum E * M / r^2`
    pub signed_inv_r2: T,
    /// `sum E * |M|`
    pub absolute: T,
    /// Largest `E * |M|` of any cell.
    pub peak: T,
}

impl<T: Scalar> MaskedSums<T> {
    pub fn accumulate(&mut self, other: &Self) {
        self.signed = self.signed + other.signed;
        self.signed_inv_r2 = self.signed_inv_r2 + other.signed_inv_r2;
        self.absolute = self.absolute + other.absolute;
        self.peak = self.peak.max(other.peak);
    }

    /// Inverse-square weighted ternary balance; `None` when nothing is masked.
    pub fn ratio(&self) -> Option<T> {
        (self.absolute > T::zero()).then(|| self.signed_inv_r2 / self.absolute)
    }
}

/// Computes all masked sums in one pass. The caller guarantees matching specs.
pub fn masked_sums<T: Scalar>(e: &Energyscape<T>, m: &TernaryMask<T>) -> MaskedSums<T> {
    let n_az = e.spec.n_azimuth();
    let mut out = MaskedSums {
        signed: T::zero(),
        signed_inv_r2: T::zero(),
        absolute: T::zero(),
        peak: T::zero(),
    };
    let mut last_row = usize::MAX;
    let mut inv_r2 = T::zero();
    for &idx in m.active_cells() {
        let idx = idx as usize;
        let ev = e.cells[idx];
        if ev == T::zero() {
            continue;
        }
        let row = idx / n_az;
        if row != last_row {
            let r = e.spec.range_center(row);
            inv_r2 = T::one() / (r * r);
            last_row = row;
        }
        let v = if m.cells[idx] > 0 { ev } else { -ev };
        out.signed = out.signed + v;
        out.signed_inv_r2 = out.signed_inv_r2 + v * inv_r2;
        out.absolute = out.absolute + ev;
        out.peak = out.peak.max(ev);
    }
    out
}

/// Ratio of the `1/r^2`-weighted ternary sum to the masked absolute energy.
pub fn masked_inverse_r2_ratio<T: Scalar>(e: &Energyscape<T>, m: &TernaryMask<T>) -> Result<T> {
    if e.spec != m.spec {
        return Err(Error::SpecMismatch);
    }
    masked_sums(e, m).ratio().ok_or(Error::ZeroDenominator)
}

/// Alignment of the energyscape with a flow-line: mean of `E sqrt(r)` over
/// the raster's cells.
pub fn gamma<T: Scalar>(e: &Energyscape<T>, f: &RasterFlowLine<T>) -> Result<T> {
    if e.spec != f.spec {
        return Err(Error::SpecMismatch);
    }
    if f.cells.is_empty() {
        return Err(Error::EmptyRaster {
            d: f.d.to_f64_lossy(),
            sensor_index: f.sensor_index,
        });
    }
    let total = f
        .cells
        .iter()
        .map(|&(i, k)| e.get(i, k) * e.spec.range_center(i).sqrt())
        .fold(T::zero(), |a, b| a + b);
    Ok(total / T::from_usize_lossy(f.cells.len()))
}

/// Region shapes and lateral distances for all layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionConfig<T> {
    pub ca: Vec<ControlRegion<T>>,
    pub oa: Vec<ControlRegion<T>>,
    pub rcf: Vec<ControlRegion<T>>,
    /// Signed lateral distances (left positive) probed by flow following.
    pub aff_distances: Vec<T>,
}

impl<T: Scalar> Default for RegionConfig<T> {
    fn default() -> Self {
        let deg = |x: f64| T::lit(x.to_radians());
        let wedge_r = [T::lit(0.3), T::lit(3.0)];
        let mut aff = Vec::new();
        for k in (3..=25).rev() {
            aff.push(T::lit(-(k as f64) / 10.0));
        }
        for k in 3..=25 {
            aff.push(T::lit(k as f64 / 10.0));
        }
        Self {
            // Front half-disc: the platform never drives into what is behind it
            // except while reversing out of a collision-avoidance episode.
            ca: vec![ControlRegion::Wedge {
                bearing: [deg(-90.0), deg(90.0)],
                range: [T::zero(), T::lit(0.5)],
            }],
            oa: vec![ControlRegion::Trapezoid {
                near_half_width: T::lit(0.3),
                far_half_width: T::lit(0.6),
                length: T::lit(1.5),
                forward_offset: T::lit(0.2),
            }],
            rcf: vec![
                ControlRegion::Wedge {
                    bearing: [deg(-65.0), deg(-25.0)],
                    range: wedge_r,
                },
                ControlRegion::Wedge {
                    bearing: [deg(25.0), deg(65.0)],
                    range: wedge_r,
                },
            ],
            aff_distances: aff,
        }
    }
}

impl<T: Scalar> RegionConfig<T> {
    pub fn regions(&self, layer: Layer) -> &[ControlRegion<T>] {
        match layer {
            Layer::CollisionAvoidance => &self.ca,
            Layer::ObstacleAvoidance => &self.oa,
            Layer::CorridorFollowing => &self.rcf,
            Layer::FlowFollowing => &[],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .aff_distances
            .iter()
            .any(|d| *d == T::zero() || !d.is_finite())
        {
            return Err(Error::Config(
                "flow-following distances must be finite and non-zero".into(),
            ));
        }
        let mut sorted = self.aff_distances.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted != self.aff_distances {
            return Err(Error::Config(
                "flow-following distances must be sorted ascending".into(),
            ));
        }
        Ok(())
    }
}

/// Masks and rasters precomputed for every (layer, sensor) pair.
#[derive(Debug, Clone)]
pub struct MaskBank<T> {
    pub spec: GridSpec<T>,
    pub poses: Vec<SensorPose<T>>,
    /// Indexed `[layer][sensor]` for CA, OA and RCF.
    pub masks: [Vec<TernaryMask<T>>; 3],
    pub distances: Vec<T>,
    /// Indexed `[distance][sensor]`; `None` where the flow-line misses the FOV.
    pub rasters: Vec<Vec<Option<RasterFlowLine<T>>>>,
}

impl<T: Scalar> MaskBank<T> {
    pub fn build(
        poses: &[SensorPose<T>],
        spec: &GridSpec<T>,
        regions: &RegionConfig<T>,
    ) -> Result<Self> {
        spec.validate()?;
        regions.validate()?;
        let layer_masks = |layer: Layer| -> Vec<TernaryMask<T>> {
            poses
                .iter()
                .enumerate()
                .map(|(j, p)| build_region_mask(regions.regions(layer), p, spec, layer, j))
                .collect()
        };
        let masks = [
            layer_masks(Layer::CollisionAvoidance),
            layer_masks(Layer::ObstacleAvoidance),
            layer_masks(Layer::CorridorFollowing),
        ];
        let mut rasters = Vec::with_capacity(regions.aff_distances.len());
        for &d in &regions.aff_distances {
            let mut row = Vec::with_capacity(poses.len());
            for (j, p) in poses.iter().enumerate() {
                row.push(match rasterize_flow_line(p, d, spec, j) {
                    Ok(r) => Some(r),
                    Err(Error::EmptyRaster { .. }) => None,
                    Err(e) => return Err(e),
                });
            }
            rasters.push(row);
        }
        Ok(Self {
            spec: *spec,
            poses: poses.to_vec(),
            masks,
            distances: regions.aff_distances.clone(),
            rasters,
        })
    }

    pub fn sensor_count(&self) -> usize {
        self.poses.len()
    }

    pub fn masks(&self, layer: Layer) -> &[TernaryMask<T>] {
        match layer {
            Layer::CollisionAvoidance => &self.masks[0],
            Layer::ObstacleAvoidance => &self.masks[1],
            Layer::CorridorFollowing => &self.masks[2],
            Layer::FlowFollowing => &[],
        }
    }
}

/// Writes a grid-shaped matrix as CSV: one row per range bin, one column per
/// azimuth bin.
pub fn write_matrix_csv<W: Write, V: fmt::Display>(
    out: &mut W,
    spec_rows: usize,
    spec_cols: usize,
    value: impl Fn(usize, usize) -> V,
) -> std::io::Result<()> {
    for i in 0..spec_rows {
        for k in 0..spec_cols {
            if k > 0 {
                out.write_all(b",")?;
            }
            write!(out, "{}", value(i, k))?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn spec() -> GridSpec<f64> {
        GridSpec::default()
    }

    fn center_pose() -> SensorPose<f64> {
        SensorPose::new(0.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn default_grid_dimensions() {
        let s = spec();
        assert_eq!(s.n_azimuth(), 181);
        assert_eq!(s.n_cells(), 200 * 181);
        assert_abs_diff_eq!(s.azimuth_center(90), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.range_center(0), 0.0125);
        assert_eq!(s.range_index(1.0), Some(40));
        assert_eq!(s.range_index(5.0), Some(199));
        assert_eq!(s.range_index(5.01), None);
        assert_eq!(s.azimuth_index(0.0), Some(90));
        assert_eq!(s.azimuth_index(-PI / 2.0), Some(0));
        assert_eq!(s.azimuth_index(PI), None);
    }

    #[test]
    fn invalid_grid_rejected() {
        let mut s = spec();
        s.n_range = 1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn centre_circle_mask_matches_range() {
        let reg = [ControlRegion::Circle {
            center: [0.0, 0.0],
            radius: 0.5,
        }];
        let s = spec();
        let m = build_region_mask(&reg, &center_pose(), &s, Layer::CollisionAvoidance, 0);
        for i in 0..s.n_range {
            for k in 0..s.n_azimuth() {
                let inside = s.range_center(i) <= 0.5;
                let v = m.get(i, k);
                if k == 90 {
                    // On the platform axis: no side.
                    assert_eq!(v, 0);
                } else {
                    assert_eq!(v != 0, inside, "cell {i},{k}");
                }
                if v != 0 {
                    // Positive azimuth is to the right.
                    assert_eq!(v, if k < 90 { 1 } else { -1 });
                }
            }
        }
    }

    #[test]
    fn mirrored_region_negates_mask() {
        let reg = [ControlRegion::Rectangle {
            x: [0.1, 1.4],
            y: [-0.2, 0.7],
        }];
        let s = spec();
        let pose = SensorPose::new(0.6, -0.3, 0.12).unwrap();
        let m = build_region_mask(&reg, &pose, &s, Layer::ObstacleAvoidance, 0);
        let mm = build_region_mask(
            &[reg[0].mirrored()],
            &pose.mirrored(),
            &s,
            Layer::ObstacleAvoidance,
            0,
        );
        let n = s.n_azimuth();
        for i in 0..s.n_range {
            for k in 0..n {
                assert_eq!(m.get(i, k), -mm.get(i, n - 1 - k), "cell {i},{k}");
            }
        }
        assert!(m.count_nonzero() > 0);
    }

    #[test]
    fn raster_for_centred_sensor_hugs_the_wall() {
        let s = spec();
        let r = rasterize_flow_line(&center_pose(), 1.0, &s, 0).unwrap();
        let dr = s.range_step();
        for &(i, k) in &r.cells {
            let rr = s.range_center(i);
            let th = s.azimuth_center(k);
            let half_diag = 0.5 * (dr * dr + (rr * s.azimuth_step).powi(2)).sqrt();
            // Wall on the left at d = 1: r sin(theta) = -1.
            assert!(
                (rr * th.sin() + 1.0).abs() <= half_diag + 1e-12,
                "cell {i},{k}"
            );
        }
        assert!(r.cells.iter().all(|&(_, k)| k < 90));
    }

    #[test]
    fn raster_mirror_symmetry() {
        let s = spec();
        let a = rasterize_flow_line(&center_pose(), 1.0, &s, 0).unwrap();
        let b = rasterize_flow_line(&center_pose(), -1.0, &s, 0).unwrap();
        let n = s.n_azimuth();
        let mut ma: Vec<_> = a.cells.iter().map(|&(i, k)| (i, n - 1 - k)).collect();
        let mut mb = b.cells.clone();
        ma.sort();
        mb.sort();
        assert_eq!(ma, mb);
    }

    #[test]
    fn raster_outside_range_is_empty() {
        let s = spec();
        assert!(matches!(
            rasterize_flow_line(&center_pose(), 6.0, &s, 3),
            Err(Error::EmptyRaster {
                sensor_index: 3,
                ..
            })
        ));
        assert!(rasterize_flow_line(&center_pose(), 0.0, &s, 0).is_err());
    }

    #[test]
    fn masked_sum_examples() {
        let s = spec();
        let reg = [ControlRegion::Circle {
            center: [0.0, 0.0],
            radius: 2.0,
        }];
        let m = build_region_mask(&reg, &center_pose(), &s, Layer::CollisionAvoidance, 0);
        let mut e = Energyscape::zeros(s, 0);
        assert_eq!(masked_sum(&e, &m).unwrap(), 0.0);
        e.set(20, 40, 0.6);
        assert_abs_diff_eq!(masked_sum(&e, &m).unwrap(), 0.6);
        let mut other = s;
        other.n_range = 100;
        assert!(matches!(
            masked_sum(&Energyscape::zeros(other, 0), &m),
            Err(Error::SpecMismatch)
        ));
    }

    #[test]
    fn inverse_square_ratio_examples() {
        // Grid with cell centres at r = 1 and r = 3.
        let s = GridSpec {
            r_max: 4.0,
            n_range: 2,
            ..GridSpec::default()
        };
        let n = s.n_azimuth();
        let mut cells = vec![0i8; s.n_cells()];
        cells[s.index(0, 10)] = 1;
        let m = TernaryMask::from_cells(s, cells.clone(), Layer::ObstacleAvoidance, 0).unwrap();
        let mut e = Energyscape::zeros(s, 0);
        e.set(0, 10, 1.0);
        assert_abs_diff_eq!(masked_inverse_r2_ratio(&e, &m).unwrap(), 1.0);

        let s2 = GridSpec {
            r_max: 8.0,
            n_range: 2,
            ..GridSpec::default()
        };
        let m2 = TernaryMask::from_cells(s2, cells.clone(), Layer::ObstacleAvoidance, 0).unwrap();
        let mut e2 = Energyscape::zeros(s2, 0);
        e2.set(0, 10, 1.0);
        assert_abs_diff_eq!(masked_inverse_r2_ratio(&e2, &m2).unwrap(), 0.25);

        cells[s.index(0, n - 11)] = -1;
        let m3 = TernaryMask::from_cells(s, cells, Layer::ObstacleAvoidance, 0).unwrap();
        e.set(0, n - 11, 1.0);
        assert_abs_diff_eq!(masked_inverse_r2_ratio(&e, &m3).unwrap(), 0.0);

        let empty = Energyscape::zeros(s, 0);
        assert!(matches!(
            masked_inverse_r2_ratio(&empty, &m3),
            Err(Error::ZeroDenominator)
        ));
    }

    #[test]
    fn ternary_values_validated() {
        let s = GridSpec {
            r_max: 4.0,
            n_range: 2,
            ..GridSpec::default()
        };
        let mut cells = vec![0i8; s.n_cells()];
        cells[3] = 2;
        assert!(TernaryMask::from_cells(s, cells, Layer::CollisionAvoidance, 0).is_err());
    }

    #[test]
    fn gamma_examples() {
        let s = GridSpec {
            r_max: 4.0,
            n_range: 2,
            ..GridSpec::default()
        };
        let f = RasterFlowLine {
            spec: s,
            cells: vec![(0, 1), (0, 2), (0, 3)],
            d: 1.0,
            sensor_index: 0,
        };
        let mut e = Energyscape::zeros(s, 0);
        assert_eq!(gamma(&e, &f).unwrap(), 0.0);
        for &(i, k) in &f.cells {
            e.set(i, k, 1.0);
        }
        assert_abs_diff_eq!(gamma(&e, &f).unwrap(), 1.0);
        let empty = RasterFlowLine { cells: vec![], ..f };
        assert!(gamma(&e, &empty).is_err());
    }

    #[test]
    fn default_aff_distances() {
        let r = RegionConfig::<f64>::default();
        assert_eq!(r.aff_distances.len(), 46);
        assert_abs_diff_eq!(r.aff_distances[0], -2.5);
        assert_abs_diff_eq!(r.aff_distances[22], -0.3);
        assert_abs_diff_eq!(r.aff_distances[23], 0.3);
        r.validate().unwrap();
    }
}
