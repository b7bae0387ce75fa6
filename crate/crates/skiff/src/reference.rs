//! Closed-form reference paths.
//!
//! Both path families expose position, velocity, heading, and heading rate
//! at arbitrary `t` in closed form. The desired heading is the direction of
//! the desired velocity, `atan2(Ydot_d, Xdot_d)`, kept continuous (no 2*pi
//! jumps) so it can be tracked as a real-valued coordinate:
//!
//! - the sine sweep always moves forward (`Xdot_d = v0 > 0`), so the raw
//!   `atan2` already lives in (-pi/2, pi/2) and never wraps;
//! - the drifting spiral winds when `omega > v0 * sqrt(2)`. Its velocity is
//!   `c + i w e^{i w t}` with `c = v0 (1 + i)`, so factoring out the rotor
//!   leaves a vector pinned to the right half plane and the heading splits
//!   into a linear term plus a bounded continuous correction.

use crate::dynamics::State;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("invalid curve parameter {name} = {value}")]
    InvalidParam { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    /// `X_d = v0 t`, `Y_d = Y0 sin(omega v0 t)`; `omega` in rad per meter
    /// traveled.
    Sine,
    /// `X_d = v0 t - 1 + cos(omega t)`, `Y_d = v0 t + sin(omega t)`; a unit
    /// circle swept at `omega` rad/s drifting along the diagonal at `v0`.
    Spiral,
}

/// Parametric reference path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    pub kind: CurveKind,
    /// Forward speed parameter [m/s].
    pub v0: f64,
    /// Lateral amplitude of the sine sweep [m]; unused by the spiral.
    #[serde(rename = "Y0", alias = "y0", default)]
    pub y0: f64,
    /// Sine: spatial frequency [rad/m]. Spiral: angular rate [rad/s].
    #[serde(rename = "omega_traj", alias = "omega")]
    pub omega: f64,
}

/// Desired state sampled from a reference path.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferenceState {
    pub x: f64,
    pub y: f64,
    /// Unwrapped desired heading [rad].
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
}

impl ReferenceState {
    pub fn to_vector(&self) -> nalgebra::Vector6<f64> {
        nalgebra::Vector6::new(self.x, self.y, self.heading, self.vx, self.vy, self.yaw_rate)
    }

    pub fn to_state(&self) -> State {
        State {
            x: self.x,
            y: self.y,
            heading: self.heading,
            vx: self.vx,
            vy: self.vy,
            yaw_rate: self.yaw_rate,
        }
    }
}

/// Anything that can be sampled for a desired state at time `t`.
pub trait ReferencePath {
    fn state_at(&self, t: f64) -> ReferenceState;
}

/// A constant desired state; handy for regulation problems and tests.
#[derive(Debug, Clone, Copy)]
pub struct FixedReference(pub ReferenceState);

impl ReferencePath for FixedReference {
    fn state_at(&self, _t: f64) -> ReferenceState {
        self.0
    }
}

impl CurveSpec {
    pub fn sine_default() -> Self {
        Self {
            kind: CurveKind::Sine,
            v0: 0.05,
            y0: 0.3,
            omega: 2.0 * std::f64::consts::PI / 1.5,
        }
    }

    pub fn spiral_default() -> Self {
        Self { kind: CurveKind::Spiral, v0: 0.03, y0: 0.0, omega: 0.5 }
    }

    pub fn validate(&self) -> Result<(), ReferenceError> {
        if !(self.v0 > 0.0) || !self.v0.is_finite() {
            return Err(ReferenceError::InvalidParam { name: "v0", value: self.v0 });
        }
        if !(self.omega >= 0.0) || !self.omega.is_finite() {
            return Err(ReferenceError::InvalidParam { name: "omega_traj", value: self.omega });
        }
        if !(self.y0 >= 0.0) || !self.y0.is_finite() {
            return Err(ReferenceError::InvalidParam { name: "Y0", value: self.y0 });
        }
        Ok(())
    }

    fn sine_state(&self, t: f64) -> ReferenceState {
        let phase = self.omega * self.v0 * t;
        let x = self.v0 * t;
        let y = self.y0 * phase.sin();
        let vx = self.v0;
        let vy = self.y0 * self.omega * self.v0 * phase.cos();
        let ay = -self.y0 * (self.omega * self.v0).powi(2) * phase.sin();
        // vx > 0 always: atan2 stays in (-pi/2, pi/2), already continuous.
        let heading = vy.atan2(vx);
        let yaw_rate = vx * ay / (vx * vx + vy * vy);
        ReferenceState { x, y, heading, vx, vy, yaw_rate }
    }

    fn spiral_state(&self, t: f64) -> ReferenceState {
        let (s, c) = (self.omega * t).sin_cos();
        let x = self.v0 * t - 1.0 + c;
        let y = self.v0 * t + s;
        let vx = self.v0 - self.omega * s;
        let vy = self.v0 + self.omega * c;
        let ax = -self.omega * self.omega * c;
        let ay = -self.omega * self.omega * s;

        let heading = if self.omega > self.v0 * std::f64::consts::SQRT_2 {
            // Winding case: velocity = v0 (1 + i) + w e^{i (w t + pi/2)}.
            // Factor the rotor out; the remainder has positive real part
            // (w > |v0 (1+i)|), so its atan2 never crosses the branch cut.
            let phi = self.omega * t + std::f64::consts::FRAC_PI_2;
            let (sp, cp) = phi.sin_cos();
            let re = self.omega + self.v0 * (cp + sp);
            let im = self.v0 * (cp - sp);
            phi + im.atan2(re)
        } else {
            // Non-winding: velocity stays inside a disc around v0 (1 + i)
            // that excludes the origin, away from the atan2 branch cut.
            vy.atan2(vx)
        };

        let speed_sq = vx * vx + vy * vy;
        let yaw_rate = if speed_sq > 1e-24 { (vx * ay - vy * ax) / speed_sq } else { 0.0 };
        ReferenceState { x, y, heading, vx, vy, yaw_rate }
    }
}

impl ReferencePath for CurveSpec {
    fn state_at(&self, t: f64) -> ReferenceState {
        match self.kind {
            CurveKind::Sine => self.sine_state(t),
            CurveKind::Spiral => self.spiral_state(t),
        }
    }
}

/// Largest mismatch between closed-form velocities and central differences
/// of positions / heading over `samples` points in `[t0, t1]`. Diagnostic
/// for the closed forms; the test suite pins its value.
pub fn derivative_check(curve: &CurveSpec, t0: f64, t1: f64, samples: usize) -> f64 {
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for k in 0..samples {
        let t = t0 + (t1 - t0) * (k as f64 + 0.5) / samples as f64;
        let sp = curve.state_at(t + h);
        let sm = curve.state_at(t - h);
        let s = curve.state_at(t);
        worst = worst.max(((sp.x - sm.x) / (2.0 * h) - s.vx).abs());
        worst = worst.max(((sp.y - sm.y) / (2.0 * h) - s.vy).abs());
        worst = worst.max(((sp.heading - sm.heading) / (2.0 * h) - s.yaw_rate).abs());
    }
    worst
}
