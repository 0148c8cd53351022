//! Closed-loop simulation runs, seeded batches, threshold calibration and
//! their file outputs.
//!
//! The harness is `f64` throughout.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{activation_statistic, Controller, ControllerConfig, VelocityCommand};
use crate::energyscape::{write_matrix_csv, Energyscape, GridSpec, Layer, MaskBank};
use crate::error::{Error, Result};
use crate::flow::SensorPose;
use crate::scalar::wrap_angle;
use crate::sonar::{simulate_energyscape, Circle, Segment, SonarConfig, StartZone, WorldModel};
use crate::vehicle::{
    check_collision, guidance_tick, integrate_motion, GuidanceConfig, RobotState,
};

/// Real-time budget of one tick at 10 Hz.
pub const TICK_BUDGET: Duration = Duration::from_millis(100);
pub const MAX_SENSORS: usize = 3;
const START_ATTEMPTS: usize = 200;

/// Sensor mount as written in configuration files: angles in degrees,
/// lever arm in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorMount {
    pub alpha_deg: f64,
    pub beta_deg: f64,
    pub l: f64,
}

impl SensorMount {
    pub fn pose(&self) -> Result<SensorPose<f64>> {
        SensorPose::from_degrees(self.alpha_deg, self.beta_deg, self.l)
    }
}

fn default_tick_hz() -> f64 {
    10.0
}

fn default_max_time() -> f64 {
    240.0
}

fn default_robot_radius() -> f64 {
    0.2
}

fn default_heading_jitter() -> f64 {
    0.3
}

/// One sensor configuration plus everything needed to run it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub sensors: Vec<SensorMount>,
    #[serde(default)]
    pub controller: ControllerConfig<f64>,
    #[serde(default)]
    pub guidance: GuidanceConfig<f64>,
    #[serde(default)]
    pub sonar: SonarConfig<f64>,
    #[serde(default)]
    pub grid: GridSpec<f64>,
    #[serde(default = "default_tick_hz")]
    pub tick_hz: f64,
    /// Simulated time after which an unfinished run times out, seconds.
    #[serde(default = "default_max_time")]
    pub max_time: f64,
    #[serde(default = "default_robot_radius")]
    pub robot_radius: f64,
    /// Start heading is the bearing to the first waypoint plus a uniform
    /// offset of at most this many radians.
    #[serde(default = "default_heading_jitter")]
    pub heading_jitter: f64,
}

impl RunConfig {
    pub fn new(name: impl Into<String>, sensors: Vec<SensorMount>) -> Self {
        Self {
            name: name.into(),
            sensors,
            controller: ControllerConfig::default(),
            guidance: GuidanceConfig::default(),
            sonar: SonarConfig::default(),
            grid: GridSpec::default(),
            tick_hz: default_tick_hz(),
            max_time: default_max_time(),
            robot_radius: default_robot_radius(),
            heading_jitter: default_heading_jitter(),
        }
    }

    pub fn from_json_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|source| Error::Json {
            path: origin.to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    /// Loads a single file, or every `*.json` in a directory sorted by name.
    pub fn load_many(path: &Path) -> Result<Vec<Self>> {
        if !path.is_dir() {
            return Ok(vec![Self::load(path)?]);
        }
        let io = |source| Error::Io {
            path: path.display().to_string(),
            source,
        };
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(io)?
            .map(|e| e.map(|e| e.path()).map_err(io))
            .collect::<Result<_>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == "json"));
        files.sort();
        if files.is_empty() {
            return Err(Error::Config(format!(
                "no .json configs in {}",
                path.display()
            )));
        }
        files.iter().map(|p| Self::load(p)).collect()
    }

    pub fn poses(&self) -> Result<Vec<SensorPose<f64>>> {
        self.sensors.iter().map(SensorMount::pose).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensors.is_empty() || self.sensors.len() > MAX_SENSORS {
            return Err(Error::Config(format!(
                "{}: expected 1..={MAX_SENSORS} sensors, got {}",
                self.name,
                self.sensors.len()
            )));
        }
        self.poses()?;
        self.controller.validate()?;
        self.guidance.validate()?;
        self.sonar.validate()?;
        self.grid.validate()?;
        if !(self.tick_hz > 0.0
            && self.max_time > 0.0
            && self.robot_radius > 0.0
            && self.heading_jitter >= 0.0)
        {
            return Err(Error::Config(
                "tick_hz, max_time and robot_radius must be positive, heading_jitter >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.tick_hz
    }

    pub fn tick_limit(&self) -> usize {
        (self.max_time * self.tick_hz).ceil() as usize
    }
}

/// SplitMix64 finaliser, used to derive independent seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn run_seed(master: u64, config_index: usize, run_index: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ config_index as u64) ^ run_index as u64)
}

fn noise_seed(run: u64, tick: usize, sensor: usize) -> u64 {
    splitmix64(splitmix64(run ^ 0xA5A5_5A5A_0F0F_F0F0) ^ ((tick as u64) << 8 | sensor as u64))
}

/// One logged tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    pub omega: f64,
    pub layer: Option<Layer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: String,
    pub run_index: usize,
    pub seed: u64,
    pub trajectory: Vec<TrajectorySample>,
    pub collided: bool,
    pub completed: bool,
    pub waypoints_reached: usize,
    pub error: Option<String>,
    /// Wall-clock time of the run; excluded from reports.
    #[serde(skip)]
    pub duration: Duration,
    #[serde(skip)]
    pub slowest_tick: Duration,
}

impl RunResult {
    fn failed(config: &str, run_index: usize, seed: u64, err: &Error) -> Self {
        Self {
            config: config.to_string(),
            run_index,
            seed,
            trajectory: Vec::new(),
            collided: false,
            completed: false,
            waypoints_reached: 0,
            error: Some(err.to_string()),
            duration: Duration::ZERO,
            slowest_tick: Duration::ZERO,
        }
    }

    /// Ticks spent in each layer, in [`Layer::ALL`] order, then pass-through.
    pub fn layer_counts(&self) -> [usize; 5] {
        let mut c = [0; 5];
        for s in &self.trajectory {
            let i = s
                .layer
                .map_or(4, |l| Layer::ALL.iter().position(|x| *x == l).unwrap_or(4));
            c[i] += 1;
        }
        c
    }
}

/// Draws a collision-free start pose from the world's start zone.
pub fn sample_start(
    world: &WorldModel<f64>,
    cfg: &RunConfig,
    rng: &mut impl Rng,
) -> Result<RobotState<f64>> {
    let StartZone { min, max } = world.start_zone;
    for _ in 0..START_ATTEMPTS {
        let x = if max[0] > min[0] {
            rng.gen_range(min[0]..=max[0])
        } else {
            min[0]
        };
        let y = if max[1] > min[1] {
            rng.gen_range(min[1]..=max[1])
        } else {
            min[1]
        };
        let jitter = if cfg.heading_jitter > 0.0 {
            rng.gen_range(-cfg.heading_jitter..=cfg.heading_jitter)
        } else {
            0.0
        };
        let base = world
            .waypoints
            .first()
            .map_or(0.0, |w| (w[1] - y).atan2(w[0] - x));
        let mut s = RobotState::new([x, y], wrap_angle(base + jitter));
        s.radius = cfg.robot_radius;
        if !check_collision(&s, world, 0.0).0 {
            return Ok(s);
        }
    }
    Err(Error::DegenerateWorld(format!(
        "no collision-free start found in zone {min:?}..{max:?} for a {} m robot",
        cfg.robot_radius
    )))
}

/// A configuration with its masks built, ready to run repeatedly.
#[derive(Debug, Clone)]
pub struct PreparedConfig {
    pub cfg: RunConfig,
    pub poses: Vec<SensorPose<f64>>,
    pub controller: Controller<f64>,
}

impl PreparedConfig {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let poses = cfg.poses()?;
        let controller = Controller::new(cfg.controller.clone(), &poses, &cfg.grid)?;
        Ok(Self {
            cfg,
            poses,
            controller,
        })
    }

    /// Renders the energyscapes of every sensor for the robot at `state`.
    pub fn frames(
        &self,
        world: &WorldModel<f64>,
        state: &RobotState<f64>,
        t: f64,
        seed: u64,
        tick: usize,
    ) -> Vec<Energyscape<f64>> {
        self.poses
            .iter()
            .enumerate()
            .map(|(j, pose)| {
                let frame = state.sensor_frame(pose);
                simulate_energyscape(
                    world,
                    &frame,
                    t,
                    &self.cfg.sonar,
                    &self.cfg.grid,
                    j,
                    noise_seed(seed, tick, j),
                )
            })
            .collect()
    }

    /// Closed loop from a given start state.
    pub fn run_from(
        &self,
        world: &WorldModel<f64>,
        start: RobotState<f64>,
        seed: u64,
        run_index: usize,
        ticks_max: Option<usize>,
    ) -> Result<RunResult> {
        let began = Instant::now();
        let cfg = &self.cfg;
        let dt = cfg.dt();
        let limit = ticks_max.unwrap_or_else(|| cfg.tick_limit());
        let mut controller = self.controller.clone();
        controller.reset();
        let mut state = start;
        let mut wp = 0;
        let mut out = RunResult {
            config: cfg.name.clone(),
            run_index,
            seed,
            trajectory: Vec::with_capacity(limit.min(1 << 16)),
            collided: false,
            completed: false,
            waypoints_reached: 0,
            error: None,
            duration: Duration::ZERO,
            slowest_tick: Duration::ZERO,
        };
        for tick in 0..limit {
            let t = tick as f64 * dt;
            let mut sample = TrajectorySample {
                t,
                x: state.position[0],
                y: state.position[1],
                heading: state.heading,
                v: 0.0,
                omega: 0.0,
                layer: None,
            };
            if check_collision(&state, world, t).0 {
                out.collided = true;
                out.trajectory.push(sample);
                break;
            }
            let tick_start = Instant::now();
            let (input, next) = guidance_tick(&state, &world.waypoints, wp, &cfg.guidance);
            wp = next;
            if wp >= world.waypoints.len() {
                out.completed = true;
                out.trajectory.push(sample);
                break;
            }
            let frames = self.frames(world, &state, t, seed, tick);
            let report = controller.tick(&frames, input)?;
            let cmd: VelocityCommand<f64> = report.decision.command;
            let spent = tick_start.elapsed();
            if spent > TICK_BUDGET {
                log::warn!("{} run {run_index}: tick {tick} took {spent:?}, over the {TICK_BUDGET:?} budget", cfg.name);
            }
            out.slowest_tick = out.slowest_tick.max(spent);
            sample.v = cmd.v;
            sample.omega = cmd.omega;
            sample.layer = report.decision.layer;
            out.trajectory.push(sample);
            state = integrate_motion(&state, cmd, dt);
        }
        out.waypoints_reached = wp;
        out.duration = began.elapsed();
        Ok(out)
    }

    pub fn run(
        &self,
        world: &WorldModel<f64>,
        seed: u64,
        run_index: usize,
        ticks_max: Option<usize>,
    ) -> Result<RunResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = sample_start(world, &self.cfg, &mut rng)?;
        self.run_from(world, start, seed, run_index, ticks_max)
    }
}

/// One seeded closed-loop run.
pub fn run_single(
    cfg: &RunConfig,
    world: &WorldModel<f64>,
    seed: u64,
    ticks_max: Option<usize>,
) -> Result<RunResult> {
    PreparedConfig::new(cfg.clone())?.run(world, seed, 0, ticks_max)
}

/// World-space occupancy counts of trajectory samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub origin: [f64; 2],
    pub cell: f64,
    pub cols: usize,
    pub rows: usize,
    /// Row-major, row 0 at `origin[1]`.
    #[serde(skip)]
    pub counts: Vec<u64>,
}

impl Heatmap {
    pub fn covering(world: &WorldModel<f64>, results: &[RunResult], cell: f64) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        let mut grow = |p: [f64; 2]| {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        };
        world.walls.iter().for_each(|w| {
            grow(w.a());
            grow(w.b());
        });
        grow(world.start_zone.min);
        grow(world.start_zone.max);
        world.waypoints.iter().for_each(|p| grow(*p));
        results
            .iter()
            .flat_map(|r| &r.trajectory)
            .for_each(|s| grow([s.x, s.y]));
        let origin = [
            (lo[0] / cell).floor() * cell - cell,
            (lo[1] / cell).floor() * cell - cell,
        ];
        let cols = ((hi[0] - origin[0]) / cell).floor() as usize + 2;
        let rows = ((hi[1] - origin[1]) / cell).floor() as usize + 2;
        Self {
            origin,
            cell,
            cols,
            rows,
            counts: vec![0; cols * rows],
        }
    }

    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let c = ((p[0] - self.origin[0]) / self.cell).floor();
        let r = ((p[1] - self.origin[1]) / self.cell).floor();
        (c >= 0.0 && r >= 0.0 && (c as usize) < self.cols && (r as usize) < self.rows)
            .then_some((r as usize, c as usize))
    }

    pub fn add(&mut self, result: &RunResult) {
        for s in &result.trajectory {
            if let Some((r, c)) = self.cell_of([s.x, s.y]) {
                self.counts[r * self.cols + c] += 1;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub name: String,
    pub runs: usize,
    pub collisions: usize,
    pub completed: usize,
    pub errors: usize,
    pub mean_ticks: f64,
    /// Ticks per layer over all runs: CA, OA, RCF, AFF, pass-through.
    pub layer_ticks: [usize; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub master_seed: u64,
    pub runs_per_config: usize,
    pub total_runs: usize,
    pub collisions: usize,
    pub completed: usize,
    pub errors: usize,
    pub completion_rate: f64,
    pub heatmap_total: u64,
    pub configs: Vec<ConfigSummary>,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: String,
    pub run_index: usize,
    pub seed: u64,
    pub ticks: usize,
    pub collided: bool,
    pub completed: bool,
    pub waypoints_reached: usize,
    pub error: Option<String>,
    pub final_pose: Option<[f64; 3]>,
}

impl BatchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn success(&self) -> bool {
        self.collisions == 0 && self.errors == 0
    }
}

pub struct BatchOutcome {
    pub results: Vec<RunResult>,
    pub report: BatchReport,
    pub heatmap: Heatmap,
}

/// Runs every (config × repeat) cell. Results come back in config-major
/// order regardless of scheduling; failures are recorded, not propagated.
pub fn run_batch(
    configs: &[RunConfig],
    world: &WorldModel<f64>,
    master_seed: u64,
    runs: usize,
    ticks_max: Option<usize>,
) -> Result<BatchOutcome> {
    if configs.is_empty() {
        return Err(Error::Config("batch needs at least one config".into()));
    }
    world.validate()?;
    let prepared: Vec<std::result::Result<PreparedConfig, String>> = configs
        .par_iter()
        .map(|c| PreparedConfig::new(c.clone()).map_err(|e| e.to_string()))
        .collect();
    let cells: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..runs).map(move |r| (c, r)))
        .collect();
    let results: Vec<RunResult> = cells
        .par_iter()
        .map(|&(ci, ri)| {
            let seed = run_seed(master_seed, ci, ri);
            let name = &configs[ci].name;
            let outcome = match &prepared[ci] {
                Ok(p) => p.run(world, seed, ri, ticks_max),
                Err(msg) => Err(Error::Config(msg.clone())),
            };
            match outcome {
                Ok(r) => {
                    log::info!(
                        "{name} run {ri}: {} ticks, {}{}",
                        r.trajectory.len(),
                        if r.completed {
                            "completed"
                        } else {
                            "not completed"
                        },
                        if r.collided { ", COLLIDED" } else { "" }
                    );
                    r
                }
                Err(e) => {
                    log::error!("{name} run {ri}: {e}");
                    RunResult::failed(name, ri, seed, &e)
                }
            }
        })
        .collect();

    let mut heatmap = Heatmap::covering(world, &results, 0.05);
    results.iter().for_each(|r| heatmap.add(r));
    let report = summarise(configs, &results, master_seed, runs, heatmap.total());
    Ok(BatchOutcome {
        results,
        report,
        heatmap,
    })
}

fn summarise(
    configs: &[RunConfig],
    results: &[RunResult],
    master_seed: u64,
    runs: usize,
    heatmap_total: u64,
) -> BatchReport {
    let summaries = configs
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let mine = &results[ci * runs..(ci + 1) * runs];
            let mut layer_ticks = [0; 5];
            for r in mine {
                for (a, b) in layer_ticks.iter_mut().zip(r.layer_counts()) {
                    *a += b;
                }
            }
            ConfigSummary {
                name: c.name.clone(),
                runs,
                collisions: mine.iter().filter(|r| r.collided).count(),
                completed: mine.iter().filter(|r| r.completed).count(),
                errors: mine.iter().filter(|r| r.error.is_some()).count(),
                mean_ticks: if runs == 0 {
                    0.0
                } else {
                    mine.iter().map(|r| r.trajectory.len()).sum::<usize>() as f64 / runs as f64
                },
                layer_ticks,
            }
        })
        .collect::<Vec<_>>();
    let total = results.len();
    let completed = results.iter().filter(|r| r.completed).count();
    BatchReport {
        master_seed,
        runs_per_config: runs,
        total_runs: total,
        collisions: results.iter().filter(|r| r.collided).count(),
        completed,
        errors: results.iter().filter(|r| r.error.is_some()).count(),
        completion_rate: if total == 0 {
            0.0
        } else {
            completed as f64 / total as f64
        },
        heatmap_total,
        configs: summaries,
        runs: results
            .iter()
            .map(|r| RunSummary {
                config: r.config.clone(),
                run_index: r.run_index,
                seed: r.seed,
                ticks: r.trajectory.len(),
                collided: r.collided,
                completed: r.completed,
                waypoints_reached: r.waypoints_reached,
                error: r.error.clone(),
                final_pose: r.trajectory.last().map(|s| [s.x, s.y, s.heading]),
            })
            .collect(),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(io_err(path))
}

pub fn trajectory_csv(result: &RunResult) -> String {
    let mut s = String::from("t,x,y,heading,V_o,omega_o,active_layer\n");
    for p in &result.trajectory {
        let layer = p.layer.map_or("none", |l| l.short_name());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            p.t, p.x, p.y, p.heading, p.v, p.omega, layer
        );
    }
    s
}

/// Writes `report.json`, `heatmap.csv`, `heatmap.json` and one trajectory
/// CSV per run under `out_dir`.
pub fn write_batch_outputs(out_dir: &Path, outcome: &BatchOutcome) -> Result<()> {
    let traj_dir = out_dir.join("trajectories");
    std::fs::create_dir_all(&traj_dir).map_err(io_err(&traj_dir))?;
    write_file(&out_dir.join("report.json"), &outcome.report.to_json())?;
    let h = &outcome.heatmap;
    let path = out_dir.join("heatmap.csv");
    let mut buf = Vec::new();
    write_matrix_csv(&mut buf, h.rows, h.cols, |r, c| {
        h.counts[r * h.cols + c] as f64
    })
    .map_err(io_err(&path))?;
    std::fs::File::create(&path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(io_err(&path))?;
    write_file(
        &out_dir.join("heatmap.json"),
        &serde_json::to_string_pretty(h).expect("heatmap header serialises"),
    )?;
    for r in &outcome.results {
        let name = format!("{}_run{:03}.csv", sanitise(&r.config), r.run_index);
        write_file(&traj_dir.join(name), &trajectory_csv(r))?;
    }
    Ok(())
}

fn sanitise(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Threshold window of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCalibration {
    pub layer: Layer,
    pub threshold: f64,
    pub noise_p99: f64,
    pub noise_max: f64,
    /// Smallest activation statistic over the probe scenes this layer sees.
    pub weakest_echo: f64,
    pub probes_seen: usize,
    pub pass: bool,
}

impl LayerCalibration {
    pub fn margin(&self) -> f64 {
        (self.threshold - self.noise_p99).min(self.weakest_echo - self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub config: String,
    pub noise_frames: usize,
    pub layers: Vec<LayerCalibration>,
}

impl CalibrationReport {
    pub fn pass(&self) -> bool {
        self.layers.iter().all(|l| l.pass)
    }

    /// The first failing layer as an error.
    pub fn into_result(self) -> Result<Self> {
        match self.layers.iter().find(|l| !l.pass) {
            None => Ok(self),
            Some(l) => Err(Error::Calibration {
                layer: l.layer.to_string(),
                noise_p99: l.noise_p99,
                threshold: l.threshold,
                weakest_echo: l.weakest_echo,
            }),
        }
    }
}

type Scene = (Vec<Segment<f64>>, Vec<Circle<f64>>);

/// Static probe scenes per layer, in platform coordinates with the robot at
/// the origin facing +x.
fn probe_scenes(layer: Layer) -> Vec<Scene> {
    let lateral = |y: f64| (vec![Segment::new([-20.0, y], [20.0, y])], vec![]);
    let ahead = |x: f64| (vec![Segment::new([x, -20.0], [x, 20.0])], vec![]);
    let pillar = |bearing_deg: f64, r: f64| {
        let b = bearing_deg.to_radians();
        let circle = Circle {
            center: [r * b.cos(), -r * b.sin()],
            radius: 0.15,
        };
        (vec![], vec![circle])
    };
    match layer {
        Layer::CollisionAvoidance => vec![ahead(0.45), pillar(60.0, 0.5), pillar(-60.0, 0.5)],
        Layer::ObstacleAvoidance => vec![ahead(1.0), ahead(1.4)],
        Layer::CorridorFollowing => vec![pillar(45.0, 1.2), pillar(-45.0, 1.2)],
        Layer::FlowFollowing => [0.5, 1.0, 2.0, -0.5, -1.0, -2.0]
            .into_iter()
            .map(lateral)
            .collect(),
    }
}

fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let idx = ((v.len() - 1) as f64 * q).ceil() as usize;
    v[idx.min(v.len() - 1)]
}

/// Checks `noise_p99 < threshold < weakest echo` for every layer.
///
/// Noise statistics come from `noise_frames` seeded renders of an empty
/// scene; echo statistics from noiseless lone-wall probes. Probes that a
/// configuration cannot see at all are skipped.
pub fn calibrate(cfg: &RunConfig, noise_frames: usize, seed: u64) -> Result<CalibrationReport> {
    cfg.validate()?;
    let poses = cfg.poses()?;
    let bank = MaskBank::build(&poses, &cfg.grid, &cfg.controller.regions)?;
    let robot = RobotState::new([0.0, 0.0], 0.0);
    let zone = StartZone {
        min: [0.0, 0.0],
        max: [0.0, 0.0],
    };
    let render =
        |world: &WorldModel<f64>, sonar: &SonarConfig<f64>, tick: usize| -> Vec<Energyscape<f64>> {
            poses
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    simulate_energyscape(
                        world,
                        &robot.sensor_frame(p),
                        0.0,
                        sonar,
                        &cfg.grid,
                        j,
                        noise_seed(seed, tick, j),
                    )
                })
                .collect()
        };
    let empty = WorldModel::empty(zone);
    let noise: Vec<Vec<Energyscape<f64>>> = (0..noise_frames)
        .map(|k| render(&empty, &cfg.sonar, k))
        .collect();
    let clean = cfg.sonar.noiseless();

    let mut layers = Vec::new();
    for layer in Layer::ALL {
        let stats = noise
            .iter()
            .map(|f| activation_statistic(f, &bank, layer, &cfg.controller))
            .collect::<Result<Vec<_>>>()?;
        let noise_max = stats.iter().copied().fold(0.0, f64::max);
        let noise_p99 = percentile(stats, 0.99);
        let mut weakest = f64::INFINITY;
        let mut seen = 0;
        for (walls, circles) in probe_scenes(layer) {
            let mut world = WorldModel::empty(zone);
            world.walls = walls;
            world.circles = circles;
            let s =
                activation_statistic(&render(&world, &clean, 0), &bank, layer, &cfg.controller)?;
            if s > 0.0 {
                seen += 1;
                weakest = weakest.min(s);
            }
        }
        if seen == 0 {
            weakest = 0.0;
        }
        let threshold = cfg.controller.threshold(layer);
        layers.push(LayerCalibration {
            layer,
            threshold,
            noise_p99,
            noise_max,
            weakest_echo: weakest,
            probes_seen: seen,
            pass: noise_p99 < threshold && threshold < weakest,
        });
    }
    Ok(CalibrationReport {
        config: cfg.name.clone(),
        noise_frames,
        layers,
    })
}

/// Writes every mask of every sensor, and the flow-line rasters, as CSV
/// matrices (rows = range bins, columns = azimuth bins).
pub fn dump_masks(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let bank = MaskBank::build(&cfg.poses()?, &cfg.grid, &cfg.controller.regions)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let spec = bank.spec;
    let n_az = spec.n_azimuth();
    let mut written = Vec::new();
    let mut emit = |name: String, value: &dyn Fn(usize, usize) -> f64| -> Result<()> {
        let path = out_dir.join(name);
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, spec.n_range, n_az, value).map_err(io_err(&path))?;
        std::fs::write(&path, buf).map_err(io_err(&path))?;
        written.push(path);
        Ok(())
    };
    for layer in [
        Layer::CollisionAvoidance,
        Layer::ObstacleAvoidance,
        Layer::CorridorFollowing,
    ] {
        for m in bank.masks(layer) {
            emit(
                format!(
                    "{}_{}_s{}.csv",
                    sanitise(&cfg.name),
                    layer.short_name(),
                    m.sensor_index
                ),
                &|i, k| f64::from(m.get(i, k)),
            )?;
        }
    }
    for j in 0..bank.sensor_count() {
        let mut hits = vec![0.0; spec.n_cells()];
        for (row, d) in bank.rasters.iter().zip(&bank.distances) {
            if let Some(f) = &row[j] {
                for &(i, k) in &f.cells {
                    hits[i * n_az + k] = *d;
                }
            }
        }
        emit(format!("{}_AFF_s{j}.csv", sanitise(&cfg.name)), &|i, k| {
            hits[i * n_az + k]
        })?;
    }
    Ok(written)
}
