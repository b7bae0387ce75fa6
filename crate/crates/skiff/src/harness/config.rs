//! Scenario and experiment configuration, TOML round-trippable.

use crate::dynamics::VehicleParams;
use crate::ocp::{CostWeights, OnlineIdentification, RhcConfig};
use crate::reference::CurveSpec;
use crate::sim::ScenarioEvent;
use crate::sysid::{FitOptions, LearnedModel};
use nalgebra::{Matrix4, Matrix6, Vector4, Vector6};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("could not read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("could not parse {path}: {source}")]
    Parse { path: String, source: Box<toml::de::Error> },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which model the controller runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Fixed first-principles model for the unloaded hull.
    Nominal,
    /// Online weak-form refits replace the model as the run progresses.
    DataDriven,
}

/// Diagonal tracking weights (the full matrices are always diagonal here).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsConfig {
    pub q: [f64; 6],
    pub r: [f64; 4],
    pub qf: [f64; 6],
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self {
            q: [100.0, 100.0, 10.0, 1.0, 1.0, 0.1],
            r: [0.1; 4],
            qf: [100.0, 100.0, 10.0, 1.0, 1.0, 0.1],
        }
    }
}

impl WeightsConfig {
    pub fn to_cost_weights(&self) -> CostWeights {
        CostWeights {
            q: Matrix6::from_diagonal(&Vector6::from_row_slice(&self.q)),
            r: Matrix4::from_diagonal(&Vector4::from_row_slice(&self.r)),
            qf: Matrix6::from_diagonal(&Vector6::from_row_slice(&self.qf)),
        }
    }
}

/// Online identification settings (used in data-driven mode).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentConfig {
    /// Trailing data window per fit [s].
    pub window: f64,
    /// Seconds between refits.
    pub refresh: f64,
    /// Test functions per equation.
    pub tests: usize,
    /// Bump polynomial powers.
    pub p: f64,
    pub q: f64,
    /// Distrust fits leaving more than this relative residual unexplained.
    pub max_residual: f64,
    /// Scaled condition number at or under which a fit counts as fully
    /// identified and may displace hand-built coefficients.
    pub trusted_condition: f64,
}

impl Default for IdentConfig {
    fn default() -> Self {
        let opts = FitOptions::default();
        Self {
            window: 30.0,
            refresh: 30.0,
            tests: opts.tests,
            p: opts.p,
            q: opts.q,
            max_residual: opts.max_residual,
            trusted_condition: opts.trusted_condition,
        }
    }
}

impl IdentConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            tests: self.tests,
            p: self.p,
            q: self.q,
            max_residual: self.max_residual,
            trusted_condition: self.trusted_condition,
        }
    }

    pub fn online(&self) -> OnlineIdentification {
        OnlineIdentification {
            refresh: self.refresh,
            window: self.window,
            options: self.fit_options(),
        }
    }
}

/// Receding-horizon controller settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    /// Optimization horizon and re-solve period [s].
    pub horizon: f64,
    /// Collocation intervals per horizon.
    pub grid: usize,
    /// Uniform thrust level the projection pulls toward [N].
    pub guess: f64,
    pub warm_start: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let rhc = RhcConfig::default();
        Self { horizon: rhc.horizon, grid: rhc.grid, guess: rhc.guess, warm_start: rhc.warm_start }
    }
}

/// Everything one closed-loop run needs, serializable as a snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    /// True plant parameters, including any payload present from t = 0.
    pub vehicle: VehicleParams,
    /// Added to the effective radius of the controller's *initial model*
    /// only; the plant keeps the true radius. Models a mis-measured hull.
    pub model_radius_bias: f64,
    pub curve: CurveSpec,
    pub mode: Mode,
    pub weights: WeightsConfig,
    pub controller: ControllerConfig,
    pub ident: IdentConfig,
    pub events: Vec<ScenarioEvent>,
    /// Total run length [s].
    pub duration: f64,
    /// Measurement noise standard deviation.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Statistics window for the report; full run when omitted.
    pub stats_window: Option<[f64; 2]>,
    /// Default artifact directory; a CLI `--out` overrides it.
    pub out_dir: Option<String>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            vehicle: VehicleParams::default(),
            model_radius_bias: 0.0,
            curve: CurveSpec::sine_default(),
            mode: Mode::Nominal,
            weights: WeightsConfig::default(),
            controller: ControllerConfig::default(),
            ident: IdentConfig::default(),
            events: Vec::new(),
            duration: 120.0,
            noise_sigma: 0.0,
            seed: 0,
            stats_window: None,
            out_dir: None,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(ConfigError::Invalid(format!("duration {} must be positive", self.duration)));
        }
        self.vehicle.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.curve.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.weights
            .to_cost_weights()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.mode == Mode::DataDriven && self.ident.refresh > self.duration {
            return Err(ConfigError::Invalid(format!(
                "data-driven refresh {} s exceeds run duration {} s: the model would never update",
                self.ident.refresh, self.duration
            )));
        }
        if !(self.ident.window > 0.0) || !(self.ident.refresh > 0.0) {
            return Err(ConfigError::Invalid("identification window and refresh must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(ConfigError::Invalid(format!("noise_sigma {} must be ≥ 0", self.noise_sigma)));
        }
        if !(self.controller.horizon > 0.0) || self.controller.grid < 2 {
            return Err(ConfigError::Invalid("controller horizon must be positive and grid ≥ 2".into()));
        }
        if let Some([a, b]) = self.stats_window {
            if !(a >= 0.0 && b > a && b <= self.duration + 1e-9) {
                return Err(ConfigError::Invalid(format!(
                    "stats window [{a}, {b}] must lie inside [0, {}]",
                    self.duration
                )));
            }
        }
        Ok(())
    }

    /// The controller's starting model: the unloaded hull, with the
    /// configured radius bias applied. Payload is what the controller does
    /// not know about and (in data-driven mode) must learn.
    pub fn initial_model(&self) -> LearnedModel {
        let mut params = self.vehicle;
        params.payload = 0.0;
        params.effective_radius += self.model_radius_bias;
        LearnedModel::from_params(&params, 0.0)
    }

    pub fn rhc_config(&self) -> RhcConfig {
        RhcConfig {
            weights: self.weights.to_cost_weights(),
            horizon: self.controller.horizon,
            grid: self.controller.grid,
            guess: self.controller.guess,
            warm_start: self.controller.warm_start,
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s)
            .map_err(|e| ConfigError::Parse { path: "<string>".into(), source: Box::new(e) })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), source: e })?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.display().to_string(), source: Box::new(e) })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A nominal/data-driven comparison pair sharing one plant setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub nominal: ScenarioConfig,
    pub data_driven: ScenarioConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.nominal.validate()?;
        self.data_driven.validate()?;
        if self.nominal.mode != Mode::Nominal || self.data_driven.mode != Mode::DataDriven {
            return Err(ConfigError::Invalid(
                "experiment arms must be one nominal and one data_driven scenario".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), source: e })?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.display().to_string(), source: Box::new(e) })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Preset studies. The comparison presets refit every second over a short
/// trailing window, so the model reacts to a mid-run change within a few
/// seconds; the default 30 s cadence would not see a t = 30 s payload
/// until t = 60 s. A window that straddles an event either fails the
/// residual gate (external forcing) or is contradicted shortly after, so
/// the tight cadence publishes the first clean post-event window rather
/// than garbage.
pub mod presets {
    use super::*;

    fn comparison_base(name: &str) -> ScenarioConfig {
        ScenarioConfig {
            name: name.into(),
            ident: IdentConfig { window: 3.0, refresh: 1.0, ..IdentConfig::default() },
            ..ScenarioConfig::default()
        }
    }

    fn pair(name: &str, base: ScenarioConfig) -> ExperimentConfig {
        let nominal = ScenarioConfig {
            name: format!("{name}-nominal"),
            mode: Mode::Nominal,
            ..base.clone()
        };
        let data_driven = ScenarioConfig {
            name: format!("{name}-data-driven"),
            mode: Mode::DataDriven,
            ..base
        };
        ExperimentConfig { name: name.into(), nominal, data_driven }
    }

    /// Self-identification run: 0.2 kg payload carried from the start,
    /// one fit over the first 30 s.
    pub fn identification() -> ScenarioConfig {
        let mut cfg = ScenarioConfig {
            name: "identification".into(),
            mode: Mode::DataDriven,
            duration: 32.0,
            ..ScenarioConfig::default()
        };
        cfg.vehicle.payload = 0.2;
        cfg
    }

    /// Sine tracking with a 2 kg payload dropped on at t = 30 s.
    pub fn sine_payload_shift() -> ExperimentConfig {
        let base = ScenarioConfig {
            events: vec![ScenarioEvent::PayloadSet { time: 30.0, payload: 2.0 }],
            duration: 120.0,
            stats_window: Some([35.0, 120.0]),
            ..comparison_base("sine-payload")
        };
        pair("sine-payload", base)
    }

    /// The same payload shift while tracking the spiral.
    pub fn spiral_payload_shift() -> ExperimentConfig {
        let base = ScenarioConfig {
            curve: CurveSpec::spiral_default(),
            events: vec![ScenarioEvent::PayloadSet { time: 30.0, payload: 2.0 }],
            duration: 120.0,
            stats_window: Some([35.0, 120.0]),
            ..comparison_base("spiral-payload")
        };
        pair("spiral-payload", base)
    }

    /// Impulse rejection: 2 kg payload from the start, a (1 N, 1 N,
    /// 0.5 N·m) world-frame push for 0.5 s at t = 15 s.
    pub fn disturbance_rejection() -> ExperimentConfig {
        let mut base = ScenarioConfig {
            events: vec![ScenarioEvent::Disturbance {
                time: 15.0,
                duration: 0.5,
                force: [1.0, 1.0],
                torque: 0.5,
            }],
            duration: 60.0,
            stats_window: Some([10.0, 60.0]),
            ..comparison_base("disturbance")
        };
        base.vehicle.payload = 2.0;
        pair("disturbance", base)
    }

    /// Payload values of the sweep study: 0 to 2 kg in 0.2 kg steps.
    pub fn sweep_payloads() -> Vec<f64> {
        (0..=10).map(|i| i as f64 * 0.2).collect()
    }

    /// One sweep cell: fixed payload from the start, the initial model's
    /// effective radius biased +0.02 m in both arms.
    pub fn payload_sweep_cell(payload: f64) -> ExperimentConfig {
        let label = format!("sweep-{payload:.1}kg");
        let mut base = ScenarioConfig {
            model_radius_bias: 0.02,
            duration: 120.0,
            stats_window: Some([35.0, 120.0]),
            ..comparison_base(&label)
        };
        base.vehicle.payload = payload;
        pair(&label, base)
    }

    pub fn by_name(name: &str) -> Option<ExperimentConfig> {
        match name {
            "sine-payload" => Some(sine_payload_shift()),
            "spiral-payload" => Some(spiral_payload_shift()),
            "disturbance" => Some(disturbance_rejection()),
            _ => None,
        }
    }

    pub const EXPERIMENT_NAMES: [&str; 3] = ["sine-payload", "spiral-payload", "disturbance"];
}
