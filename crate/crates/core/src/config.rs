//! Plain-text `key = value` configuration shared by every tool.
//!
//! Lines are `section.name = value`; `#` starts a comment and blank lines
//! are ignored. Keys not present keep their defaults. Unknown and repeated
//! keys are errors naming the key.
//!
//! ```text
//! geometry.marker_joints = 5, 10, 15, 20, 25
//! rfs.noise_sigma = 150      # both sensors
//! train.epochs = 200
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::calib::{LrSchedule, Precision, TrainConfig};
use crate::datagen::{ProtocolParams, Simulator};
use crate::error::{Error, Result};
use crate::kinematics::{ComplianceProfile, GeometryParams, ManipulatorGeometry, TendonModel};
use crate::sensors::{RfsParams, SensorSuite};
use crate::MARKER_COUNT;

#[derive(Debug, Clone, PartialEq)]
pub struct TendonParams {
    /// Linear distal stiffening of the compliance profile; 0 is uniform.
    pub compliance_gradient: f64,
    /// Tip backlash width, degrees.
    pub backlash_width: f64,
}

impl Default for TendonParams {
    fn default() -> Self {
        Self {
            compliance_gradient: 0.0,
            backlash_width: 2.0,
        }
    }
}

/// Every configurable parameter, with defaults for missing keys.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub geometry: GeometryParams,
    pub tendon: TendonParams,
    /// Applied to both sensors.
    pub rfs: RfsParams,
    pub sensors: SensorSuite,
    pub trial: ProtocolParams,
    pub train: TrainConfig,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_markers(key: &str, value: &str) -> Result<[usize; MARKER_COUNT]> {
    let joints: Vec<usize> = value
        .split(',')
        .map(|v| parse_value(key, v.trim()))
        .collect::<Result<_>>()?;
    joints
        .try_into()
        .map_err(|j: Vec<usize>| Error::config(key, format!("expected {MARKER_COUNT} joints, got {}", j.len())))
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses config text and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Config::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: None,
                    line: i as u64 + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "given more than once"));
            }
            config.set(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        let (g, r, a, e, t, tr) = (
            &mut self.geometry,
            &mut self.rfs,
            &mut self.sensors.adc,
            &mut self.sensors.encoder,
            &mut self.trial,
            &mut self.train,
        );
        match key {
            "geometry.joint_count" => g.joint_count = parse_value(key, v)?,
            "geometry.steerable_length" => g.steerable_length = parse_value(key, v)?,
            "geometry.marker_joints" => g.marker_joints = parse_markers(key, v)?,
            "geometry.max_motor_steps" => g.max_motor_steps = parse_value(key, v)?,
            "geometry.tip_angle_limit" => g.tip_angle_limit = parse_value(key, v)?,
            "geometry.channel_offset" => g.channel_offset = parse_value(key, v)?,
            "tendon.compliance_gradient" => self.tendon.compliance_gradient = parse_value(key, v)?,
            "tendon.backlash_width" => self.tendon.backlash_width = parse_value(key, v)?,
            "rfs.flat_resistance" => r.flat_resistance = parse_value(key, v)?,
            "rfs.sensitivity" => r.sensitivity = parse_value(key, v)?,
            "rfs.asymmetry_gain" => r.asymmetry_gain = parse_value(key, v)?,
            "rfs.active_length" => r.active_length = parse_value(key, v)?,
            "rfs.noise_sigma" => r.noise_sigma = parse_value(key, v)?,
            "rfs.drift_step_sigma" => r.drift_step_sigma = parse_value(key, v)?,
            "adc.supply_voltage" => a.supply_voltage = parse_value(key, v)?,
            "adc.divider_resistance" => a.divider_resistance = parse_value(key, v)?,
            "adc.resolution_bits" => a.resolution_bits = parse_value(key, v)?,
            "encoder.counts_per_mm" => e.counts_per_mm = parse_value(key, v)?,
            "encoder.max_travel" => e.max_travel = parse_value(key, v)?,
            "trial.step_increment" => t.step_increment = parse_value(key, v)?,
            "trial.max_steps" => t.max_steps = parse_value(key, v)?,
            "trial.frames_per_step" => t.frames_per_step = parse_value(key, v)?,
            "trial.stabilization_samples" => t.stabilization_samples = parse_value(key, v)?,
            "trial.rows_retained" => t.rows_retained = parse_value(key, v)?,
            "trial.camera_noise_sigma" => t.camera_noise_sigma = parse_value(key, v)?,
            "train.learning_rate" => tr.learning_rate = parse_value(key, v)?,
            "train.beta1" => tr.beta1 = parse_value(key, v)?,
            "train.beta2" => tr.beta2 = parse_value(key, v)?,
            "train.epsilon" => tr.epsilon = parse_value(key, v)?,
            "train.batch_size" => tr.batch_size = parse_value(key, v)?,
            "train.epochs" => tr.epochs = parse_value(key, v)?,
            "train.validation_fraction" => tr.validation_fraction = parse_value(key, v)?,
            "train.seed" => tr.seed = parse_value(key, v)?,
            "train.hidden" => tr.architecture.hidden = parse_value(key, v)?,
            "train.blocks" => tr.architecture.blocks = parse_value(key, v)?,
            "train.precision" => {
                tr.precision = match v {
                    "single" => Precision::Single,
                    "double" => Precision::Double,
                    _ => return Err(Error::config(key, "expected `single` or `double`")),
                }
            }
            "train.lr_schedule" => {
                tr.schedule = match v {
                    "constant" => LrSchedule::Constant,
                    "cosine" => LrSchedule::Cosine {
                        final_fraction: tr.schedule.final_fraction().unwrap_or(0.1),
                    },
                    "exponential" => LrSchedule::Exponential {
                        final_fraction: tr.schedule.final_fraction().unwrap_or(1e-4),
                        hold_fraction: match tr.schedule {
                            LrSchedule::Exponential { hold_fraction, .. } => hold_fraction,
                            _ => 0.5,
                        },
                    },
                    _ => return Err(Error::config(key, "expected `constant`, `cosine` or `exponential`")),
                }
            }
            "train.lr_final_fraction" => {
                let f = parse_value(key, v)?;
                match &mut tr.schedule {
                    LrSchedule::Cosine { final_fraction } | LrSchedule::Exponential { final_fraction, .. } => *final_fraction = f,
                    LrSchedule::Constant => tr.schedule = LrSchedule::Cosine { final_fraction: f },
                }
            }
            "train.lr_hold_fraction" => {
                let h = parse_value(key, v)?;
                match &mut tr.schedule {
                    LrSchedule::Exponential { hold_fraction, .. } => *hold_fraction = h,
                    other => {
                        *other = LrSchedule::Exponential {
                            final_fraction: other.final_fraction().unwrap_or(1e-4),
                            hold_fraction: h,
                        }
                    }
                }
            }
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.simulator()?;
        self.train.validate()
    }

    /// Geometry, tendon and sensor models as configured.
    pub fn simulator(&self) -> Result<Simulator> {
        let geometry = ManipulatorGeometry::new(self.geometry.clone())?;
        let profile = ComplianceProfile::distal_gradient(geometry.joint_count(), self.tendon.compliance_gradient)?;
        if !(self.tendon.backlash_width >= 0.0 && self.tendon.backlash_width.is_finite()) {
            return Err(Error::config("tendon.backlash_width", "must be finite and nonnegative"));
        }
        let sensors = SensorSuite {
            left: self.rfs.clone(),
            right: self.rfs.clone(),
            ..self.sensors.clone()
        };
        sensors.validate()?;
        self.trial.validate(&geometry)?;
        Ok(Simulator {
            tendon: TendonModel::new(profile, self.tendon.backlash_width),
            geometry,
            sensors,
            protocol: self.trial.clone(),
        })
    }

    /// Complete key listing that parses back to the same config.
    pub fn render(&self) -> String {
        let (g, r, a, e, t, tr) = (
            &self.geometry,
            &self.rfs,
            &self.sensors.adc,
            &self.sensors.encoder,
            &self.trial,
            &self.train,
        );
        let markers: Vec<String> = g.marker_joints.iter().map(ToString::to_string).collect();
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("geometry.joint_count", g.joint_count.to_string());
        put("geometry.steerable_length", g.steerable_length.to_string());
        put("geometry.marker_joints", markers.join(", "));
        put("geometry.max_motor_steps", g.max_motor_steps.to_string());
        put("geometry.tip_angle_limit", g.tip_angle_limit.to_string());
        put("geometry.channel_offset", g.channel_offset.to_string());
        put("tendon.compliance_gradient", self.tendon.compliance_gradient.to_string());
        put("tendon.backlash_width", self.tendon.backlash_width.to_string());
        put("rfs.flat_resistance", r.flat_resistance.to_string());
        put("rfs.sensitivity", r.sensitivity.to_string());
        put("rfs.asymmetry_gain", r.asymmetry_gain.to_string());
        put("rfs.active_length", r.active_length.to_string());
        put("rfs.noise_sigma", r.noise_sigma.to_string());
        put("rfs.drift_step_sigma", r.drift_step_sigma.to_string());
        put("adc.supply_voltage", a.supply_voltage.to_string());
        put("adc.divider_resistance", a.divider_resistance.to_string());
        put("adc.resolution_bits", a.resolution_bits.to_string());
        put("encoder.counts_per_mm", e.counts_per_mm.to_string());
        put("encoder.max_travel", e.max_travel.to_string());
        put("trial.step_increment", t.step_increment.to_string());
        put("trial.max_steps", t.max_steps.to_string());
        put("trial.frames_per_step", t.frames_per_step.to_string());
        put("trial.stabilization_samples", t.stabilization_samples.to_string());
        put("trial.rows_retained", t.rows_retained.to_string());
        put("trial.camera_noise_sigma", t.camera_noise_sigma.to_string());
        put("train.learning_rate", tr.learning_rate.to_string());
        put("train.beta1", tr.beta1.to_string());
        put("train.beta2", tr.beta2.to_string());
        put("train.epsilon", tr.epsilon.to_string());
        put("train.batch_size", tr.batch_size.to_string());
        put("train.epochs", tr.epochs.to_string());
        put("train.validation_fraction", tr.validation_fraction.to_string());
        put("train.seed", tr.seed.to_string());
        put("train.hidden", tr.architecture.hidden.to_string());
        put("train.blocks", tr.architecture.blocks.to_string());
        put(
            "train.precision",
            match tr.precision {
                Precision::Single => "single",
                Precision::Double => "double",
            }
            .into(),
        );
        match tr.schedule {
            LrSchedule::Constant => put("train.lr_schedule", "constant".into()),
            LrSchedule::Cosine { final_fraction } => {
                put("train.lr_schedule", "cosine".into());
                put("train.lr_final_fraction", final_fraction.to_string());
            }
            LrSchedule::Exponential { final_fraction, hold_fraction } => {
                put("train.lr_schedule", "exponential".into());
                put("train.lr_final_fraction", final_fraction.to_string());
                put("train.lr_hold_fraction", hold_fraction.to_string());
            }
        }
        s
    }
}
