//! Fixed-step simulation of the vehicle under a digital controller.
//!
//! The plant integrates with classical RK4 at `dt_sim` while the controller
//! runs at a fixed 100 Hz with zero-order-hold thrusts, mirroring hardware
//! where actuation updates are far slower than the physics. Scenario events
//! (payload changes, pulse disturbances) fire at control-tick boundaries so
//! runs are bit-for-bit reproducible for a given seed.

use crate::dynamics::{DynamicsError, GeneralizedForce, Plant, State, Thrusts, VehicleParams};
use crate::reference::{ReferencePath, ReferenceState};
use nalgebra::Vector6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Controller update rate [Hz]. The plant substep count is derived from it.
pub const CONTROL_RATE_HZ: f64 = 100.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("invalid simulation option {name} = {value}")]
    InvalidOption { name: &'static str, value: f64 },
    #[error("csv log: {0}")]
    Csv(String),
}

/// Integration and measurement options for one run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptions {
    /// Plant integration step [s]; must divide the 10 ms control period.
    pub dt_sim: f64,
    /// Std-dev of white Gaussian noise added to logged/measured states.
    pub noise_sigma: f64,
    /// Seed for the measurement-noise stream.
    pub seed: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { dt_sim: 1e-3, noise_sigma: 0.0, seed: 0 }
    }
}

/// Timed scenario event, applied at the first control tick at or after `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioEvent {
    /// Replace the carried payload mass [kg] (e.g. picking up cargo).
    PayloadSet { time: f64, payload: f64 },
    /// Constant external force [N] and yaw torque [N m] in the world frame,
    /// active on `[time, time + duration)`.
    Disturbance { time: f64, duration: f64, force: [f64; 2], torque: f64 },
}

impl ScenarioEvent {
    pub fn time(&self) -> f64 {
        match self {
            ScenarioEvent::PayloadSet { time, .. } => *time,
            ScenarioEvent::Disturbance { time, .. } => *time,
        }
    }
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFault {
    pub time: f64,
    pub reason: String,
}

/// Time series of one run: logged (possibly noisy) states, zero-order-hold
/// thrust commands, and the sampled reference. Rows are aligned: entry `k`
/// is the sample at `t = k / 100 Hz`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub controls: Vec<Thrusts>,
    pub references: Vec<ReferenceState>,
    /// Planar tracking error `sqrt((X - X_d)^2 + (Y - Y_d)^2)` per row.
    pub errors: Vec<f64>,
    pub fault: Option<RunFault>,
}

pub const CSV_HEADER: [&str; 15] = [
    "t", "X_G", "Y_G", "theta", "Xdot", "Ydot", "thetadot", "F1", "F2", "F3", "F4", "X_d", "Y_d",
    "theta_d", "e",
];

impl RunLog {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn push(&mut self, t: f64, state: State, u: Thrusts, reference: ReferenceState) {
        let e = ((state.x - reference.x).powi(2) + (state.y - reference.y).powi(2)).sqrt();
        self.times.push(t);
        self.states.push(state);
        self.controls.push(u);
        self.references.push(reference);
        self.errors.push(e);
    }

    /// Indices of rows with `t_from <= t < t_to`.
    pub fn window_indices(&self, t_from: f64, t_to: f64) -> std::ops::Range<usize> {
        let start = self.times.partition_point(|&t| t < t_from);
        let end = self.times.partition_point(|&t| t < t_to);
        start..end
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER).map_err(|e| SimError::Csv(e.to_string()))?;
        for k in 0..self.len() {
            let s = &self.states[k];
            let u = &self.controls[k];
            let r = &self.references[k];
            let fields = [
                self.times[k],
                s.x,
                s.y,
                s.heading,
                s.vx,
                s.vy,
                s.yaw_rate,
                u[0],
                u[1],
                u[2],
                u[3],
                r.x,
                r.y,
                r.heading,
                self.errors[k],
            ];
            let row: Vec<String> = fields.iter().map(|v| v.to_string()).collect();
            w.write_record(&row).map_err(|e| SimError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| SimError::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String, SimError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| SimError::Csv(e.to_string()))
    }

    /// Parse a log written by [`RunLog::write_csv`]. Reference velocities are
    /// not stored in the file and come back as zero; the fault marker, if
    /// any, is not serialized.
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self, SimError> {
        let mut rdr = csv::Reader::from_reader(input);
        {
            let got = rdr.headers().map_err(|e| SimError::Csv(e.to_string()))?;
            if got.len() != CSV_HEADER.len() {
                return Err(SimError::Csv(format!(
                    "expected {} columns, found {}",
                    CSV_HEADER.len(),
                    got.len()
                )));
            }
            for (g, want) in got.iter().zip(CSV_HEADER) {
                if g != want {
                    return Err(SimError::Csv(format!(
                        "unexpected column `{g}` (expected `{want}`)"
                    )));
                }
            }
        }
        let mut log = RunLog::default();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| SimError::Csv(e.to_string()))?;
            if rec.len() != CSV_HEADER.len() {
                return Err(SimError::Csv(format!("row {i}: wrong field count {}", rec.len())));
            }
            let mut v = [0.0f64; 15];
            for (j, field) in rec.iter().enumerate() {
                v[j] = field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| SimError::Csv(format!("row {i} col {}: {e}", CSV_HEADER[j])))?;
            }
            log.times.push(v[0]);
            log.states.push(State {
                x: v[1],
                y: v[2],
                heading: v[3],
                vx: v[4],
                vy: v[5],
                yaw_rate: v[6],
            });
            log.controls.push(Thrusts::new(v[7], v[8], v[9], v[10]));
            log.references.push(ReferenceState {
                x: v[11],
                y: v[12],
                heading: v[13],
                vx: 0.0,
                vy: 0.0,
                yaw_rate: 0.0,
            });
            log.errors.push(v[14]);
        }
        Ok(log)
    }

    pub fn from_csv_str(text: &str) -> Result<Self, SimError> {
        Self::read_csv(text.as_bytes())
    }
}

/// A controller fault aborts the run and is recorded in the log.
#[derive(Debug, Clone)]
pub struct ControlFault {
    pub reason: String,
}

/// Digital feedback law run at [`CONTROL_RATE_HZ`].
pub trait Controller {
    /// Compute the thrust command held over control interval `index`,
    /// given the measured state at `t`.
    fn tick(&mut self, index: usize, t: f64, measured: &State) -> Result<Thrusts, ControlFault>;
}

/// Always commands zero thrust.
pub struct ZeroController;

impl Controller for ZeroController {
    fn tick(&mut self, _: usize, _: f64, _: &State) -> Result<Thrusts, ControlFault> {
        Ok(Thrusts::zeros())
    }
}

/// Holds one fixed thrust vector forever.
pub struct ConstantController(pub Thrusts);

impl Controller for ConstantController {
    fn tick(&mut self, _: usize, _: f64, _: &State) -> Result<Thrusts, ControlFault> {
        Ok(self.0)
    }
}

/// One classical RK4 step of the rigid-body dynamics under constant thrust
/// and constant extra generalized force.
pub fn rk4_step(plant: &Plant, s: &Vector6<f64>, u: &Thrusts, extra: &GeneralizedForce, dt: f64) -> Vector6<f64> {
    let k1 = plant.derivative(s, u, extra);
    let k2 = plant.derivative(&(s + 0.5 * dt * k1), u, extra);
    let k3 = plant.derivative(&(s + 0.5 * dt * k2), u, extra);
    let k4 = plant.derivative(&(s + dt * k3), u, extra);
    s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Standard-normal draw via Box-Muller; two uniforms per call keeps the
/// stream layout independent of how the consumer batches samples.
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn measure(truth: &Vector6<f64>, sigma: f64, rng: &mut ChaCha12Rng) -> State {
    let mut v = *truth;
    if sigma > 0.0 {
        for i in 0..6 {
            v[i] += sigma * gaussian(rng);
        }
    }
    State::from_vector(&v)
}

const BLOWUP_LIMIT: f64 = 1e6;

/// Simulate `duration` seconds of closed-loop operation.
///
/// The true state starts on the reference path at `t = 0`. Each control tick
/// logs the measured state, reference, and the command that will be held for
/// the next 10 ms. Events apply at tick boundaries. A controller fault or a
/// non-finite/diverged state truncates the log after the last valid row and
/// records a [`RunFault`]; both still return `Ok` so partial data survives.
pub fn run_scenario(
    params: VehicleParams,
    path: &dyn ReferencePath,
    events: &[ScenarioEvent],
    controller: &mut dyn Controller,
    duration: f64,
    opts: &SimOptions,
) -> Result<RunLog, SimError> {
    if !(opts.dt_sim > 0.0) || !opts.dt_sim.is_finite() {
        return Err(SimError::InvalidOption { name: "dt_sim", value: opts.dt_sim });
    }
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(SimError::InvalidOption { name: "duration", value: duration });
    }
    if !(opts.noise_sigma >= 0.0) || !opts.noise_sigma.is_finite() {
        return Err(SimError::InvalidOption { name: "noise_sigma", value: opts.noise_sigma });
    }
    let tick_dt = 1.0 / CONTROL_RATE_HZ;
    let substeps = (tick_dt / opts.dt_sim).round();
    if substeps < 1.0 || ((substeps * opts.dt_sim) - tick_dt).abs() > 1e-9 {
        return Err(SimError::InvalidOption { name: "dt_sim", value: opts.dt_sim });
    }
    let substeps = substeps as usize;

    let mut plant = Plant::new(params)?;
    let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
    let n_ticks = (duration * CONTROL_RATE_HZ).round() as usize;

    let mut pending: Vec<ScenarioEvent> = events.to_vec();
    pending.sort_by(|a, b| a.time().total_cmp(&b.time()));
    let mut next_event = 0usize;
    let mut disturbances: Vec<(f64, f64, GeneralizedForce)> = Vec::new();

    let mut s = path.state_at(0.0).to_vector();
    let mut log = RunLog::default();

    for k in 0..=n_ticks {
        let t = k as f64 * tick_dt;

        // Event application is tick-aligned: first tick at or past the
        // event time. A 0.5 s pulse therefore spans exactly 50 intervals.
        while next_event < pending.len() && pending[next_event].time() <= t + 1e-12 {
            match pending[next_event] {
                ScenarioEvent::PayloadSet { payload, .. } => {
                    let mut p = *plant.params();
                    p.payload = payload;
                    plant = Plant::new(p)?;
                }
                ScenarioEvent::Disturbance { duration, force, torque, .. } => {
                    let wrench = GeneralizedForce::new(force[0], force[1], torque);
                    disturbances.push((t, t + duration, wrench));
                }
            }
            next_event += 1;
        }

        if !s.iter().all(|v| v.is_finite()) || s.amax() > BLOWUP_LIMIT {
            log.fault = Some(RunFault { time: t, reason: "state diverged".into() });
            break;
        }

        let measured = measure(&s, opts.noise_sigma, &mut rng);
        let reference = path.state_at(t);
        let u = match controller.tick(k, t, &measured) {
            Ok(u) if u.iter().all(|v| v.is_finite()) => u,
            Ok(_) => {
                log.fault =
                    Some(RunFault { time: t, reason: "controller produced non-finite thrust".into() });
                break;
            }
            Err(fault) => {
                log.fault = Some(RunFault { time: t, reason: fault.reason });
                break;
            }
        };

        log.push(t, measured, u, reference);
        if k == n_ticks {
            break;
        }

        for j in 0..substeps {
            let tj = t + j as f64 * opts.dt_sim;
            let mut extra = GeneralizedForce::zeros();
            for &(from, to, wrench) in &disturbances {
                if tj >= from - 1e-12 && tj < to - 1e-12 {
                    extra += wrench;
                }
            }
            s = rk4_step(&plant, &s, &u, &extra, opts.dt_sim);
        }
    }

    Ok(log)
}
