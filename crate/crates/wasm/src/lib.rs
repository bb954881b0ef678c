//! Browser bindings for the interactive demo page in `www/`.
//!
//! Three operations are exposed:
//!
//! - [`Manipulator`]: drive the tendon motor step by step and watch the
//!   backbone bend, including the backlash lag on release.
//! - [`sensor_sweep`]: both flex-sensor resistances at one marker across the
//!   full bending range.
//! - [`reconstruct_noisy`]: body reconstruction from marker positions
//!   corrupted by Gaussian noise, against the true shape.
//!
//! Point lists cross the boundary as flat `[x0, y0, x1, y1, ...]` arrays in mm.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rfs_shape::config::Config;
use rfs_shape::datagen::Simulator;
use rfs_shape::kinematics::{forward_kinematics, ActuationState, Direction};
use rfs_shape::reconstruct::reconstruct_shape;
use rfs_shape::{Point2, MARKER_COUNT};
use wasm_bindgen::prelude::*;

fn flatten(points: &[Point2]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y]).collect()
}

fn simulator(compliance_gradient: f64, backlash_width: f64) -> Result<Simulator, String> {
    let mut config = Config::default();
    config.tendon.compliance_gradient = compliance_gradient;
    config.tendon.backlash_width = backlash_width;
    config.simulator().map_err(|e| e.to_string())
}

/// Tendon-driven backbone with persistent backlash state.
#[wasm_bindgen]
pub struct Manipulator {
    sim: Simulator,
    state: ActuationState,
}

impl Manipulator {
    pub fn create(compliance_gradient: f64, backlash_width: f64) -> Result<Self, String> {
        Ok(Self {
            sim: simulator(compliance_gradient, backlash_width)?,
            state: ActuationState::new(Direction::Positive),
        })
    }

    /// Moves the motor to `steps` (negative values pull the other tendon)
    /// and returns the base plus every joint position.
    pub fn drive(&mut self, steps: i32) -> Result<Vec<f64>, String> {
        let direction = if steps < 0 { Direction::Negative } else { Direction::Positive };
        if direction != self.state.direction && steps != 0 {
            // release the active tendon fully before pulling the other one
            self.state.motor_steps = 0;
            self.sim.tendon.angles(&self.sim.geometry, &mut self.state).map_err(|e| e.to_string())?;
            self.state.direction = direction;
        }
        self.state.motor_steps = steps.unsigned_abs();
        let angles = self.sim.tendon.angles(&self.sim.geometry, &mut self.state).map_err(|e| e.to_string())?;
        let shape = forward_kinematics(&self.sim.geometry, &angles).map_err(|e| e.to_string())?;
        let mut points = vec![Point2::ORIGIN];
        points.extend_from_slice(&shape.joint_positions);
        Ok(flatten(&points))
    }
}

#[wasm_bindgen]
impl Manipulator {
    #[wasm_bindgen(constructor)]
    pub fn new(compliance_gradient: f64, backlash_width: f64) -> Result<Manipulator, JsError> {
        Self::create(compliance_gradient, backlash_width).map_err(|e| JsError::new(&e))
    }

    /// See [`Manipulator::drive`].
    pub fn actuate(&mut self, steps: i32) -> Result<Vec<f64>, JsError> {
        self.drive(steps).map_err(|e| JsError::new(&e))
    }

    /// Current tip angle, degrees.
    #[wasm_bindgen(getter)]
    pub fn tip_angle(&self) -> f64 {
        self.state.hysteresis_memory.iter().sum()
    }

    #[wasm_bindgen(getter)]
    pub fn max_steps(&self) -> u32 {
        self.sim.geometry.max_motor_steps()
    }
}

/// Noiseless readings at `marker` (1 to 5) for tip angles from −90° to 90°
/// in `step_deg` increments, as rows `[angle, R_L, R_R, E_L, E_R]`.
pub fn sweep(marker: usize, asymmetry_gain: f64, step_deg: f64) -> Result<Vec<f64>, String> {
    if !(1..=MARKER_COUNT).contains(&marker) {
        return Err(format!("marker must be 1 to {MARKER_COUNT}"));
    }
    if !(step_deg > 0.0) {
        return Err("angle step must be positive".into());
    }
    let mut config = Config::default();
    config.rfs.asymmetry_gain = asymmetry_gain;
    let sim = config.simulator().map_err(|e| e.to_string())?.noiseless();
    let limit = sim.geometry.tip_angle_limit();
    let count = (2.0 * limit / step_deg).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(5 * (count + 1));
    for i in 0..=count {
        let angle = -limit + i as f64 * step_deg;
        let shape = sim.shape_at_tip_angle(angle).map_err(|e| e.to_string())?;
        let r = sim.scan(&shape, &mut rng).map_err(|e| e.to_string())?[marker - 1];
        out.extend_from_slice(&[angle, r.r_left, r.r_right, r.e_left, r.e_right]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn sensor_sweep(marker: usize, asymmetry_gain: f64, step_deg: f64) -> Result<Vec<f64>, JsError> {
    sweep(marker, asymmetry_gain, step_deg).map_err(|e| JsError::new(&e))
}

/// True and reconstructed shapes of one bend.
#[wasm_bindgen]
pub struct Reconstruction {
    truth: Vec<Point2>,
    markers: Vec<Point2>,
    stations: Vec<Point2>,
    curve: Vec<Point2>,
}

impl Reconstruction {
    /// Joint-wise distance between reconstructed and true joints, mm.
    pub fn station_errors(&self) -> Vec<f64> {
        self.stations.iter().zip(&self.truth[1..]).map(|(a, b)| a.distance(*b)).collect()
    }
}

#[wasm_bindgen]
impl Reconstruction {
    /// Base plus every true joint.
    #[wasm_bindgen(getter)]
    pub fn truth(&self) -> Vec<f64> {
        flatten(&self.truth)
    }

    /// Noisy marker positions the reconstruction was built from.
    #[wasm_bindgen(getter)]
    pub fn markers(&self) -> Vec<f64> {
        flatten(&self.markers)
    }

    /// Reconstructed joint stations.
    #[wasm_bindgen(getter)]
    pub fn stations(&self) -> Vec<f64> {
        flatten(&self.stations)
    }

    /// Densely sampled interpolant.
    #[wasm_bindgen(getter)]
    pub fn curve(&self) -> Vec<f64> {
        flatten(&self.curve)
    }

    #[wasm_bindgen(getter)]
    pub fn max_error(&self) -> f64 {
        self.station_errors().into_iter().fold(0.0, f64::max)
    }
}

/// Bends to `tip_angle`, perturbs the five true markers with isotropic
/// Gaussian noise of `noise_mm` and rebuilds the body from them.
pub fn reconstruct_with_noise(tip_angle: f64, noise_mm: f64, seed: u32) -> Result<Reconstruction, String> {
    if !(noise_mm >= 0.0 && noise_mm.is_finite()) {
        return Err("noise must be finite and nonnegative".into());
    }
    let sim = Simulator::default();
    let shape = sim.shape_at_tip_angle(tip_angle).map_err(|e| e.to_string())?;
    let normal = Normal::new(0.0, noise_mm).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.into());
    let markers = shape
        .marker_positions(&sim.geometry)
        .map(|p| p + Point2::new(normal.sample(&mut rng), normal.sample(&mut rng)));
    let rebuilt = reconstruct_shape(&sim.geometry, Point2::ORIGIN, &markers).map_err(|e| e.to_string())?;
    let mut truth = vec![Point2::ORIGIN];
    truth.extend_from_slice(&shape.joint_positions);
    Ok(Reconstruction {
        truth,
        markers: markers.to_vec(),
        curve: rebuilt.curve.sample(120),
        stations: rebuilt.stations,
    })
}

#[wasm_bindgen]
pub fn reconstruct_noisy(tip_angle: f64, noise_mm: f64, seed: u32) -> Result<Reconstruction, JsError> {
    reconstruct_with_noise(tip_angle, noise_mm, seed).map_err(|e| JsError::new(&e))
}
