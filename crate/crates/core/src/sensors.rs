//! Sliding flex-sensor, ADC and encoder models.
//!
//! Two resistive flex sensors (RFS) ride in wall channels on opposite sides of
//! the backbone. Each responds affinely to the bend integrated over its
//! active window, with reduced gain for bends away from its sensitive face.
//! The resistance goes through a voltage divider into an ADC and is decoded
//! back to ohms; the channel insertion depth of each sensor is read by a
//! quadrature encoder on its rack.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kinematics::{ManipulatorGeometry, ShapeState};
use crate::MARKER_COUNT;

/// Physical length of the flex strip, mm. The active window must fit on it.
pub const RFS_PHYSICAL_LENGTH: f64 = 112.24;

/// Which wall channel a sensor occupies. The left channel is on the +y side
/// of the straight backbone, so positive (left) bends shorten it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// +1 for the side that positive joint angles bend toward.
    fn face_sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfsParams {
    /// Resistance of the unbent strip, ohm.
    pub flat_resistance: f64,
    /// ohm per degree of integrated bend toward the sensitive face.
    pub sensitivity: f64,
    /// Relative gain for bends away from the sensitive face.
    pub asymmetry_gain: f64,
    /// mm
    pub active_length: f64,
    /// Standard deviation of white read noise, ohm.
    pub noise_sigma: f64,
    /// Standard deviation of one random-walk drift increment, ohm.
    pub drift_step_sigma: f64,
}

impl Default for RfsParams {
    fn default() -> Self {
        Self {
            flat_resistance: 25_000.0,
            sensitivity: 400.0,
            asymmetry_gain: 0.25,
            active_length: 95.25,
            noise_sigma: 150.0,
            drift_step_sigma: 2.0,
        }
    }
}

impl RfsParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("rfs.flat_resistance", self.flat_resistance > 0.0),
            ("rfs.sensitivity", self.sensitivity > 0.0),
            (
                "rfs.asymmetry_gain",
                (0.0..=1.0).contains(&self.asymmetry_gain),
            ),
            (
                "rfs.active_length",
                self.active_length > 0.0 && self.active_length <= RFS_PHYSICAL_LENGTH,
            ),
            ("rfs.noise_sigma", self.noise_sigma >= 0.0),
            ("rfs.drift_step_sigma", self.drift_step_sigma >= 0.0),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((key, _)) => Err(Error::config(*key, "value out of range")),
            None => Ok(()),
        }
    }

    /// Same sensor with read noise and drift switched off.
    pub fn noiseless(&self) -> Self {
        Self {
            noise_sigma: 0.0,
            drift_step_sigma: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdcParams {
    /// V
    pub supply_voltage: f64,
    /// Fixed divider resistor, ohm. The ADC reads the voltage across it.
    pub divider_resistance: f64,
    pub resolution_bits: u32,
}

impl Default for AdcParams {
    fn default() -> Self {
        Self {
            supply_voltage: 5.0,
            divider_resistance: 10_000.0,
            resolution_bits: 10,
        }
    }
}

impl AdcParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.supply_voltage > 0.0 && self.supply_voltage.is_finite()) {
            return Err(Error::config("adc.supply_voltage", "must be positive"));
        }
        if !(self.divider_resistance > 0.0 && self.divider_resistance.is_finite()) {
            return Err(Error::config("adc.divider_resistance", "must be positive"));
        }
        if !(8..=16).contains(&self.resolution_bits) {
            return Err(Error::config("adc.resolution_bits", "must lie in 8..=16"));
        }
        Ok(())
    }

    pub fn full_scale(&self) -> u32 {
        (1 << self.resolution_bits) - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub counts_per_mm: f64,
    /// Longest rack travel that can be read, mm.
    pub max_travel: f64,
}

impl Default for EncoderParams {
    fn default() -> Self {
        Self {
            counts_per_mm: 100.0,
            max_travel: RFS_PHYSICAL_LENGTH,
        }
    }
}

impl EncoderParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.counts_per_mm > 0.0 && self.counts_per_mm.is_finite()) {
            return Err(Error::config("encoder.counts_per_mm", "must be positive"));
        }
        if !(self.max_travel > 0.0 && self.max_travel.is_finite()) {
            return Err(Error::config("encoder.max_travel", "must be positive"));
        }
        Ok(())
    }
}

/// Both flex sensors plus the shared readout chain.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensorSuite {
    pub left: RfsParams,
    pub right: RfsParams,
    pub adc: AdcParams,
    pub encoder: EncoderParams,
}

impl SensorSuite {
    pub fn validate(&self) -> Result<()> {
        self.left.validate()?;
        self.right.validate()?;
        self.adc.validate()?;
        self.encoder.validate()
    }

    pub fn noiseless(&self) -> Self {
        Self {
            left: self.left.noiseless(),
            right: self.right.noiseless(),
            ..self.clone()
        }
    }

    fn params(&self, side: Side) -> &RfsParams {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }
}

/// One measurement of both sensors at a marker position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanReading {
    /// ohm
    pub r_left: f64,
    /// ohm
    pub r_right: f64,
    /// Left channel insertion depth, mm.
    pub e_left: f64,
    /// Right channel insertion depth, mm.
    pub e_right: f64,
    /// Scanned marker, `1..=5` from base to tip.
    pub joint_index: usize,
}

impl ScanReading {
    /// Network input order: `[R_L, R_R, E_L, E_R]`.
    pub fn features(&self) -> [f64; 4] {
        [self.r_left, self.r_right, self.e_left, self.e_right]
    }

    pub fn validate(&self, geometry: &ManipulatorGeometry) -> Result<()> {
        if !(1..=MARKER_COUNT).contains(&self.joint_index) {
            return Err(Error::invalid(format!(
                "scan joint index {} outside 1..={MARKER_COUNT}",
                self.joint_index
            )));
        }
        if !(self.r_left > 0.0 && self.r_right > 0.0) {
            return Err(Error::invalid("scan resistances must be positive"));
        }
        let limit = geometry.max_channel_length();
        for e in [self.e_left, self.e_right] {
            if !(0.0..=limit).contains(&e) {
                return Err(Error::invalid(format!(
                    "insertion depth {e} mm outside [0, {limit}]"
                )));
            }
        }
        Ok(())
    }
}

/// Bend seen by a sensor whose tip is at centerline arc `insertion_depth`,
/// in degrees. Joints bending inside `[depth - active_length, depth)` count;
/// bends toward the sensor's face count fully, opposing bends are scaled by
/// `asymmetry_gain`.
pub fn integrated_bend(
    shape: &ShapeState,
    geometry: &ManipulatorGeometry,
    insertion_depth: f64,
    side: Side,
    params: &RfsParams,
) -> f64 {
    let eps = 1e-9 * geometry.steerable_length();
    let start = insertion_depth - params.active_length;
    let face = side.face_sign();
    shape
        .joint_angles
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let s = geometry.bend_location(i + 1);
            s >= start - eps && s < insertion_depth - eps
        })
        .map(|(_, &angle)| {
            let toward = face * angle;
            if toward >= 0.0 {
                toward
            } else {
                -toward * params.asymmetry_gain
            }
        })
        .sum()
}

/// One noisy resistance sample of a sensor, ohm (drift excluded).
pub fn rfs_resistance<R: Rng + ?Sized>(
    shape: &ShapeState,
    geometry: &ManipulatorGeometry,
    insertion_depth: f64,
    side: Side,
    params: &RfsParams,
    rng: &mut R,
) -> Result<f64> {
    if !(0.0..=geometry.steerable_length()).contains(&insertion_depth) {
        return Err(Error::invalid(format!(
            "insertion depth {insertion_depth} mm outside [0, {}]",
            geometry.steerable_length()
        )));
    }
    let bend = integrated_bend(shape, geometry, insertion_depth, side, params);
    let mut r = params.flat_resistance + params.sensitivity * bend;
    if params.noise_sigma > 0.0 {
        r += gaussian(rng, params.noise_sigma);
    }
    Ok(r)
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    Normal::new(0.0, sigma)
        .expect("sigma is finite and positive")
        .sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdcSample {
    pub voltage: f64,
    pub counts: u32,
}

/// Divider output `V = supply * Rd / (R + Rd)` and its floor-quantized code.
pub fn adc_quantize(resistance: f64, adc: &AdcParams) -> Result<AdcSample> {
    if !(resistance > 0.0) || resistance.is_nan() {
        return Err(Error::invalid(format!(
            "resistance must be positive, got {resistance}"
        )));
    }
    let voltage = adc.supply_voltage * adc.divider_resistance / (resistance + adc.divider_resistance);
    let full = adc.full_scale();
    let counts = ((voltage / adc.supply_voltage * full as f64).floor() as u32).min(full);
    Ok(AdcSample { voltage, counts })
}

/// Resistance at the middle of the voltage bin of `counts`. The full-scale
/// code only occurs for vanishing resistance and cannot be decoded.
pub fn adc_decode(counts: u32, adc: &AdcParams) -> Result<f64> {
    let full = adc.full_scale();
    if counts >= full {
        return Err(Error::invalid(format!(
            "ADC code {counts} is saturated (full scale {full})"
        )));
    }
    let fraction = (counts as f64 + 0.5) / full as f64;
    Ok(adc.divider_resistance * (1.0 - fraction) / fraction)
}

/// Encoder counts for an insertion depth.
pub fn encoder_reading(insertion_depth: f64, encoder: &EncoderParams) -> Result<i64> {
    if !(0.0..=encoder.max_travel).contains(&insertion_depth) {
        return Err(Error::invalid(format!(
            "insertion depth {insertion_depth} mm outside encoder travel [0, {}]",
            encoder.max_travel
        )));
    }
    Ok((insertion_depth * encoder.counts_per_mm).round() as i64)
}

pub fn encoder_decode(counts: i64, encoder: &EncoderParams) -> f64 {
    counts as f64 / encoder.counts_per_mm
}

/// Random-walk offsets of both sensors, carried by the caller across samples.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DriftState {
    pub left: f64,
    pub right: f64,
}

impl DriftState {
    /// Advance both walks by one increment.
    pub fn step<R: Rng + ?Sized>(&mut self, sensors: &SensorSuite, rng: &mut R) {
        if sensors.left.drift_step_sigma > 0.0 {
            self.left += gaussian(rng, sensors.left.drift_step_sigma);
        }
        if sensors.right.drift_step_sigma > 0.0 {
            self.right += gaussian(rng, sensors.right.drift_step_sigma);
        }
    }

    fn offset(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }
}

/// True channel depths `(E_L, E_R)` with both sensor tips level with marker
/// `joint_index`: `k * E` along the centerline, shortened on the inner side
/// and lengthened on the outer side by `channel_offset * φ`, where `φ` is the
/// cumulative bend (radians) up to the marker.
pub fn channel_depths(
    shape: &ShapeState,
    geometry: &ManipulatorGeometry,
    joint_index: usize,
) -> Result<(f64, f64)> {
    let joint = geometry.marker_joint(joint_index)?;
    let depth = joint_index as f64 * geometry.marker_spacing();
    let heading = shape.cumulative_angle(joint).to_radians();
    let offset = geometry.channel_offset() * heading;
    Ok((depth - offset, depth + offset))
}

/// One raw sample of both sensors with the sensor tips at marker
/// `joint_index`. Drift is advanced once, added to the resistance, and the
/// sum goes through the ADC and back to ohms; depths go through the encoders.
pub fn scan_reading<R: Rng + ?Sized>(
    shape: &ShapeState,
    joint_index: usize,
    geometry: &ManipulatorGeometry,
    sensors: &SensorSuite,
    drift: &mut DriftState,
    rng: &mut R,
) -> Result<ScanReading> {
    let (e_left, e_right) = channel_depths(shape, geometry, joint_index)?;
    let depth = joint_index as f64 * geometry.marker_spacing();
    drift.step(sensors, rng);
    let mut read = |side: Side| -> Result<f64> {
        let raw = rfs_resistance(shape, geometry, depth, side, sensors.params(side), rng)?
            + drift.offset(side);
        let sample = adc_quantize(raw, &sensors.adc)?;
        adc_decode(sample.counts, &sensors.adc)
    };
    let r_left = read(Side::Left)?;
    let r_right = read(Side::Right)?;
    let encode = |e: f64| -> Result<f64> {
        Ok(encoder_decode(
            encoder_reading(e, &sensors.encoder)?,
            &sensors.encoder,
        ))
    };
    Ok(ScanReading {
        r_left,
        r_right,
        e_left: encode(e_left)?,
        e_right: encode(e_right)?,
        joint_index,
    })
}
