//! Deterministic multi-robot flocking with trust-aware reflective control.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! at the crate root pin `f64`, which is what the CLI and supervisor use.

// `!(x > 0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod control;
pub mod engine;
pub mod error;
pub mod fault;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod scenario;
pub mod telemetry;
pub mod trust;
pub mod trust_comm;

pub use control::{step_swarm, ControlMethod};
pub use engine::{run, SimCommand};
pub use error::{Error, Result};
pub use model::{RobotId, Role, TrustLevel};
pub use scalar::Scalar;
pub use telemetry::{read_run, write_run};

pub type Vec3 = geometry::Vec3<f64>;
pub type RobotState = model::RobotState<f64>;
pub type SwarmParams = model::SwarmParams<f64>;
pub type TrustMap = model::TrustMap<f64>;
pub type CommGraph = model::CommGraph<f64>;
pub type FaultProfile = fault::FaultProfile<f64>;
pub type VirtualLeader = control::VirtualLeader<f64>;
pub type Uncertainty = control::Uncertainty<f64>;
pub type TrustSchedule = trust::TrustSchedule<f64>;
pub type ScenarioSpec = scenario::ScenarioSpec<f64>;
pub type Simulation = engine::Simulation<f64>;
pub type SimView = engine::SimView<f64>;
pub type RunRecord = telemetry::RunRecord<f64>;
pub type MetricsReport = metrics::MetricsReport<f64>;
