#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > y)` is how NaN gets rejected
//! Multi-sonar acoustic flow navigation.
//!
//! The crate models how echoes move through the image of a 2D sonar mounted
//! at an arbitrary pose on a differential-drive robot, builds per-sensor
//! control-region masks and flow-line rasters from that model, and fuses the
//! energyscapes of up to three sensors in a four-layer subsumption
//! controller. A geometric sonar simulator and a batch harness close the
//! loop.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the harness uses.

pub mod controller;
pub mod energyscape;
pub mod error;
pub mod flow;
pub mod harness;
pub mod scalar;
pub mod sonar;
pub mod vehicle;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type PolarCoordF64 = flow::PolarCoord<f64>;
pub type SensorPoseF64 = flow::SensorPose<f64>;
pub type SensorPoseF32 = flow::SensorPose<f32>;
pub type EgoMotionF64 = flow::EgoMotion<f64>;
pub type GridSpecF64 = energyscape::GridSpec<f64>;
pub type EnergyscapeF64 = energyscape::Energyscape<f64>;
pub type EnergyscapeF32 = energyscape::Energyscape<f32>;
pub type TernaryMaskF64 = energyscape::TernaryMask<f64>;
pub type MaskBankF64 = energyscape::MaskBank<f64>;
pub type WorldModelF64 = sonar::WorldModel<f64>;
pub type VelocityCommandF64 = controller::VelocityCommand<f64>;
pub type ControllerF64 = controller::Controller<f64>;
pub type RobotStateF64 = vehicle::RobotState<f64>;
