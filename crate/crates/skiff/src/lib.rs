//! Simulation, online model identification, and receding-horizon optimal
//! control for a small over-actuated planar watercraft.
//!
//! The stack is organized bottom-up:
//!
//! - [`dynamics`]: rigid-body equations of motion with added mass and
//!   viscous drag, four corner-mounted fixed-direction jets, analytic
//!   Jacobians, and the exact basis-coefficient expansion of the model.
//! - [`reference`]: closed-form reference paths (sine sweep, drifting
//!   spiral) with continuous unwrapped headings.
//! - [`sim`]: fixed-step RK4 plant integration at 1 kHz under a 100 Hz
//!   zero-order-hold controller, scenario events (payload changes, pulse
//!   disturbances), and the run log with its CSV schema.
//! - [`sysid`]: integral weak-form regression over compactly supported
//!   polynomial test functions; recovers the basis coefficients from
//!   logged data without differentiating it.
//! - [`ocp`]: indirect optimal control. Costate equations, trapezoidal
//!   collocation of the two-point boundary-value problem with analytic
//!   block Jacobians and a damped Newton iteration, non-negative thrust
//!   projection, and the receding-horizon controller loop.
//! - [`harness`]: scenario configuration, experiment presets, tracking
//!   and disturbance metrics, SVG plots, and the experiment runner.

pub mod dynamics;
pub mod harness;
pub mod ocp;
pub mod reference;
pub mod sim;
pub mod sysid;

pub use dynamics::{State, Thrusts, VehicleParams};
pub use harness::config::{ExperimentConfig, ScenarioConfig};
pub use sim::RunLog;
pub use sysid::LearnedModel;

/// 2-vector of `f64`.
pub type Vec2 = nalgebra::Vector2<f64>;
/// 3-vector of `f64` (generalized coordinates, velocities, forces).
pub type Vec3 = nalgebra::Vector3<f64>;
/// 4-vector of `f64` (per-jet thrusts).
pub type Vec4 = nalgebra::Vector4<f64>;
/// 6-vector of `f64` (full state).
pub type Vec6 = nalgebra::Vector6<f64>;
/// 2x2 matrix of `f64`.
pub type Mat2 = nalgebra::Matrix2<f64>;
/// 3x3 matrix of `f64`.
pub type Mat3 = nalgebra::Matrix3<f64>;
/// 6x6 matrix of `f64`.
pub type Mat6 = nalgebra::Matrix6<f64>;
