//! Four-layer subsumption controller fusing the energyscapes of all sensors.
//!
//! Steering signs: `omega > 0` turns left, mask value `+1` marks the
//! platform's left. Every avoidance law turns away from the side holding the
//! masked energy, so energy on the left yields a negative correction.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::energyscape::{
    gamma, masked_sums, Energyscape, GridSpec, Layer, MaskBank, MaskedSums, RasterFlowLine,
    RegionConfig, TernaryMask,
};
use crate::error::{Error, Result};
use crate::flow::SensorPose;
use crate::scalar::Scalar;

/// Platform velocity pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityCommand<T> {
    /// Linear speed, m/s.
    pub v: T,
    /// Yaw rate, rad/s, positive counter-clockwise.
    pub omega: T,
}

impl<T: Scalar> VelocityCommand<T> {
    pub fn new(v: T, omega: T) -> Self {
        Self { v, omega }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn clamped(self, v_limit: T, omega_limit: T) -> Self {
        Self {
            v: self.v.max(-v_limit).min(v_limit),
            omega: self.omega.max(-omega_limit).min(omega_limit),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ControllerConfig<T> {
    /// Cells at or below this energy are treated as empty before any layer
    /// sees them; zero disables the gate.
    pub noise_gate: T,
    pub t_ca: T,
    pub t_oa: T,
    pub t_rcf: T,
    pub t_aff_single: T,
    pub t_aff_corr: T,
    pub lambda_oa: T,
    pub mu_oa: T,
    pub lambda_rcf: T,
    pub lambda_aff: T,
    /// Fixed turn rate while collision avoidance is active, rad/s.
    pub ca_omega: T,
    /// Reverse speed once collision avoidance persists, m/s.
    pub ca_reverse_v: T,
    pub ca_consecutive_needed: u32,
    /// A latched collision-avoidance episode ends only once no masked cell
    /// exceeds `ca_release_ratio * t_ca`.
    pub ca_release_ratio: T,
    pub aff_consecutive_needed: u32,
    /// Largest change in single-wall distance between ticks still treated as
    /// the same wall, meters.
    pub aff_max_jump: T,
    pub v_limit: T,
    pub omega_limit: T,
    pub regions: RegionConfig<T>,
}

impl<T: Scalar> Default for ControllerConfig<T> {
    fn default() -> Self {
        Self {
            noise_gate: T::lit(0.03),
            t_ca: T::lit(0.15),
            t_oa: T::lit(0.10),
            t_rcf: T::lit(0.35),
            t_aff_single: T::lit(0.012),
            t_aff_corr: T::lit(0.012),
            lambda_oa: T::one(),
            mu_oa: T::lit(0.02),
            lambda_rcf: T::one(),
            lambda_aff: T::one(),
            ca_omega: T::lit(0.5),
            ca_reverse_v: T::lit(-0.1),
            ca_consecutive_needed: 4,
            ca_release_ratio: T::lit(0.5),
            aff_consecutive_needed: 2,
            aff_max_jump: T::lit(0.3),
            v_limit: T::lit(0.3),
            omega_limit: T::lit(1.5),
            regions: RegionConfig::default(),
        }
    }
}

impl<T: Scalar> ControllerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("t_ca", self.t_ca),
            ("t_oa", self.t_oa),
            ("t_rcf", self.t_rcf),
            ("t_aff_single", self.t_aff_single),
            ("t_aff_corr", self.t_aff_corr),
            ("v_limit", self.v_limit),
            ("omega_limit", self.omega_limit),
        ];
        for (name, v) in positive {
            if !(v > T::zero()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.noise_gate >= T::zero()) {
            return Err(Error::Config("noise_gate must be >= 0".into()));
        }
        if self.ca_consecutive_needed < 1 || self.aff_consecutive_needed < 1 {
            return Err(Error::Config(
                "consecutive activation counts must be >= 1".into(),
            ));
        }
        if !(self.ca_release_ratio > T::zero() && self.ca_release_ratio <= T::one()) {
            return Err(Error::Config("ca_release_ratio must lie in (0, 1]".into()));
        }
        self.regions.validate()
    }

    pub fn threshold(&self, layer: Layer) -> T {
        match layer {
            Layer::CollisionAvoidance => self.t_ca,
            Layer::ObstacleAvoidance => self.t_oa,
            Layer::CorridorFollowing => self.t_rcf,
            Layer::FlowFollowing => self.t_aff_single.min(self.t_aff_corr),
        }
    }
}

/// Memory carried between controller ticks.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerState<T> {
    pub ca_consecutive: u32,
    pub aff_consecutive: u32,
    /// Previous single-wall distance, present only if single-wall following
    /// was active on the previous tick.
    pub d_p: Option<T>,
    pub ca_latched: bool,
    /// Turn direction held for the current collision-avoidance episode.
    pub ca_turn: Option<T>,
}

/// Winning layer and its command for one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerDecision<T> {
    /// `None` when the input command passes through.
    pub layer: Option<Layer>,
    pub command: VelocityCommand<T>,
}

fn fused_sums<T: Scalar>(frames: &[Energyscape<T>], masks: &[TernaryMask<T>]) -> MaskedSums<T> {
    let mut total = MaskedSums::default();
    for (e, m) in frames.iter().zip(masks) {
        total.accumulate(&masked_sums(e, m));
    }
    total
}

/// Collision avoidance: turn in place away from the energy, reversing once the
/// condition has persisted.
pub fn ca_layer<T: Scalar>(
    frames: &[Energyscape<T>],
    masks: &[TernaryMask<T>],
    cfg: &ControllerConfig<T>,
    state: &mut ControllerState<T>,
) -> Option<VelocityCommand<T>> {
    let sums = fused_sums(frames, masks);
    let gate = if state.ca_latched {
        cfg.t_ca * cfg.ca_release_ratio
    } else {
        cfg.t_ca
    };
    if !(sums.peak > gate) {
        state.ca_consecutive = 0;
        state.ca_latched = false;
        state.ca_turn = None;
        return None;
    }
    state.ca_consecutive += 1;
    state.ca_latched = true;
    let turn = *state.ca_turn.get_or_insert_with(|| {
        if sums.signed >= T::zero() {
            -T::one()
        } else {
            T::one()
        }
    });
    let v = if state.ca_consecutive >= cfg.ca_consecutive_needed {
        cfg.ca_reverse_v
    } else {
        T::zero()
    };
    Some(VelocityCommand::new(v, turn * cfg.ca_omega))
}

/// Obstacle avoidance: steer away from, and slow down for, energy ahead.
pub fn oa_layer<T: Scalar>(
    frames: &[Energyscape<T>],
    masks: &[TernaryMask<T>],
    cfg: &ControllerConfig<T>,
    input: VelocityCommand<T>,
) -> Option<VelocityCommand<T>> {
    let sums = fused_sums(frames, masks);
    if !(sums.peak > cfg.t_oa) {
        return None;
    }
    let ratio = sums.ratio().unwrap_or_else(T::zero);
    let slow = (T::one() - cfg.mu_oa * sums.absolute)
        .max(T::zero())
        .min(T::one());
    Some(VelocityCommand::new(
        input.v * slow,
        input.omega - cfg.lambda_oa * ratio,
    ))
}

/// Reactive corridor following: balance the peripheral energy.
pub fn rcf_layer<T: Scalar>(
    frames: &[Energyscape<T>],
    masks: &[TernaryMask<T>],
    cfg: &ControllerConfig<T>,
    input: VelocityCommand<T>,
) -> Option<VelocityCommand<T>> {
    let sums = fused_sums(frames, masks);
    if !(sums.peak > cfg.t_rcf) {
        return None;
    }
    let ratio = sums.ratio().unwrap_or_else(T::zero);
    Some(VelocityCommand::new(
        input.v,
        input.omega - cfg.lambda_rcf * ratio,
    ))
}

/// Fused flow-line alignment over the lateral-distance grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffProfile<T> {
    pub distances: Vec<T>,
    pub gamma: Vec<T>,
    /// Indices into `distances` of local maxima above the lower AFF threshold.
    pub peaks: Vec<usize>,
}

impl<T: Scalar> AffProfile<T> {
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, g) in self.gamma.iter().enumerate() {
            if best.is_none_or(|b| *g > self.gamma[b]) {
                best = Some(i);
            }
        }
        best
    }
}

/// Computes `Gamma(d) = sum_j Gamma_j(d)` and its peaks.
///
/// `rasters` is indexed `[distance][sensor]`; empty flow-lines are skipped.
/// Distances on the left (`d > 0`) and right (`d < 0`) are separate
/// sequences; a peak is a strict local maximum within its sequence.
pub fn aff_detect<T: Scalar>(
    frames: &[Energyscape<T>],
    rasters: &[Vec<Option<RasterFlowLine<T>>>],
    distances: &[T],
    cfg: &ControllerConfig<T>,
) -> Result<AffProfile<T>> {
    let mut g = Vec::with_capacity(distances.len());
    for row in rasters {
        let mut total = T::zero();
        for (e, f) in frames.iter().zip(row) {
            if let Some(f) = f {
                total = total + gamma(e, f)?;
            }
        }
        g.push(total);
    }
    let threshold = cfg.threshold(Layer::FlowFollowing);
    let n = g.len();
    let same_side = |a: usize, b: usize| (distances[a] > T::zero()) == (distances[b] > T::zero());
    let mut peaks = Vec::new();
    for i in 0..n {
        if !(g[i] > threshold) {
            continue;
        }
        let left_ok = i == 0 || !same_side(i, i - 1) || g[i] > g[i - 1];
        let right_ok = i + 1 == n || !same_side(i, i + 1) || g[i] > g[i + 1];
        if left_ok && right_ok {
            peaks.push(i);
        }
    }
    Ok(AffProfile {
        distances: distances.to_vec(),
        gamma: g,
        peaks,
    })
}

fn strongest<T: Scalar>(
    p: &AffProfile<T>,
    threshold: T,
    side: impl Fn(T) -> bool,
) -> Option<usize> {
    let mut best: Option<usize> = None;
    for &i in &p.peaks {
        if side(p.distances[i])
            && p.gamma[i] > threshold
            && best.is_none_or(|b| p.gamma[i] > p.gamma[b])
        {
            best = Some(i);
        }
    }
    best
}

/// Flow following: corridor centring on two opposite peaks, otherwise
/// single-wall distance keeping.
pub fn aff_layer<T: Scalar>(
    profile: &AffProfile<T>,
    cfg: &ControllerConfig<T>,
    state: &mut ControllerState<T>,
    input: VelocityCommand<T>,
) -> Option<VelocityCommand<T>> {
    let left = strongest(profile, cfg.t_aff_corr, |d| d > T::zero());
    let right = strongest(profile, cfg.t_aff_corr, |d| d < T::zero());
    if let (Some(l), Some(r)) = (left, right) {
        state.aff_consecutive += 1;
        state.d_p = None;
        let d_l = profile.distances[l];
        let d_r = -profile.distances[r];
        return Some(VelocityCommand::new(
            input.v,
            input.omega + cfg.lambda_aff * (d_l - d_r),
        ));
    }
    let single = strongest(profile, cfg.t_aff_single, |_| true);
    let Some(s) = single else {
        state.aff_consecutive = 0;
        state.d_p = None;
        return None;
    };
    let d_s = profile.distances[s];
    state.aff_consecutive += 1;
    let same_wall = state.d_p.filter(|&d_p| {
        (d_p > T::zero()) == (d_s > T::zero()) && (d_s - d_p).abs() <= cfg.aff_max_jump
    });
    let omega = match same_wall {
        Some(d_p) if state.aff_consecutive >= cfg.aff_consecutive_needed => {
            input.omega + cfg.lambda_aff * (d_s - d_p)
        }
        _ => input.omega,
    };
    state.d_p = Some(d_s);
    Some(VelocityCommand::new(input.v, omega))
}

/// Quantity compared against a layer's threshold: the largest masked cell
/// for the region layers, the largest fused Γ for flow following.
pub fn activation_statistic<T: Scalar>(
    frames: &[Energyscape<T>],
    bank: &MaskBank<T>,
    layer: Layer,
    cfg: &ControllerConfig<T>,
) -> Result<T> {
    let frames = gate_frames(frames, cfg.noise_gate);
    let frames = frames.as_ref();
    match layer {
        Layer::FlowFollowing => {
            let p = aff_detect(frames, &bank.rasters, &bank.distances, cfg)?;
            Ok(p.gamma.iter().copied().fold(T::zero(), T::max))
        }
        _ => Ok(fused_sums(frames, bank.masks(layer)).peak),
    }
}

fn gate_frames<T: Scalar>(frames: &[Energyscape<T>], gate: T) -> Cow<'_, [Energyscape<T>]> {
    if gate > T::zero() {
        Cow::Owned(frames.iter().map(|e| e.gated(gate)).collect())
    } else {
        Cow::Borrowed(frames)
    }
}

/// Candidate commands of every layer for one tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LayerOutputs<T> {
    pub ca: Option<VelocityCommand<T>>,
    pub oa: Option<VelocityCommand<T>>,
    pub rcf: Option<VelocityCommand<T>>,
    pub aff: Option<VelocityCommand<T>>,
}

/// Picks the highest-priority active layer (CA > OA > RCF > AFF) and clamps
/// the result to the velocity limits.
pub fn arbitrate<T: Scalar>(
    outputs: &LayerOutputs<T>,
    input: VelocityCommand<T>,
    cfg: &ControllerConfig<T>,
) -> LayerDecision<T> {
    let ordered = [
        (Layer::CollisionAvoidance, outputs.ca),
        (Layer::ObstacleAvoidance, outputs.oa),
        (Layer::CorridorFollowing, outputs.rcf),
        (Layer::FlowFollowing, outputs.aff),
    ];
    let (layer, cmd) = ordered
        .into_iter()
        .find_map(|(l, c)| c.map(|c| (Some(l), c)))
        .unwrap_or((None, input));
    LayerDecision {
        layer,
        command: cmd.clamped(cfg.v_limit, cfg.omega_limit),
    }
}

/// Everything the controller computed on one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickReport<T> {
    pub decision: LayerDecision<T>,
    pub outputs: LayerOutputs<T>,
    pub profile: AffProfile<T>,
}

/// Controller with cached masks and its inter-tick state.
#[derive(Debug, Clone)]
pub struct Controller<T> {
    pub cfg: ControllerConfig<T>,
    pub bank: MaskBank<T>,
    pub state: ControllerState<T>,
}

impl<T: Scalar> Controller<T> {
    pub fn new(
        cfg: ControllerConfig<T>,
        poses: &[SensorPose<T>],
        spec: &GridSpec<T>,
    ) -> Result<Self> {
        cfg.validate()?;
        if poses.is_empty() {
            return Err(Error::Config("controller needs at least one sensor".into()));
        }
        let bank = MaskBank::build(poses, spec, &cfg.regions)?;
        Ok(Self {
            cfg,
            bank,
            state: ControllerState::default(),
        })
    }

    pub fn reset(&mut self) {
        self.state = ControllerState::default();
    }

    /// Evaluates all layers on one set of frames (one per sensor, in pose
    /// order) and arbitrates.
    pub fn tick(
        &mut self,
        frames: &[Energyscape<T>],
        input: VelocityCommand<T>,
    ) -> Result<TickReport<T>> {
        if frames.len() != self.bank.sensor_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} energyscapes, got {}",
                self.bank.sensor_count(),
                frames.len()
            )));
        }
        if frames.iter().any(|f| f.spec != self.bank.spec) {
            return Err(Error::SpecMismatch);
        }
        let cfg = &self.cfg;
        let gated = gate_frames(frames, cfg.noise_gate);
        let frames = gated.as_ref();
        let outputs_ca = ca_layer(
            frames,
            self.bank.masks(Layer::CollisionAvoidance),
            cfg,
            &mut self.state,
        );
        let oa = oa_layer(
            frames,
            self.bank.masks(Layer::ObstacleAvoidance),
            cfg,
            input,
        );
        let rcf = rcf_layer(
            frames,
            self.bank.masks(Layer::CorridorFollowing),
            cfg,
            input,
        );
        let profile = aff_detect(frames, &self.bank.rasters, &self.bank.distances, cfg)?;
        let aff = aff_layer(&profile, cfg, &mut self.state, input);
        let outputs = LayerOutputs {
            ca: outputs_ca,
            oa,
            rcf,
            aff,
        };
        Ok(TickReport {
            decision: arbitrate(&outputs, input, cfg),
            outputs,
            profile,
        })
    }
}
