//! Simulation and learned calibration of sliding resistive flex sensors (RFS)
//! inside a planar, cable-driven continuum manipulator.
//!
//! The crate is organized along the data flow of the sensing pipeline:
//!
//! 1. [`kinematics`] – notched-backbone forward kinematics and the tendon
//!    actuation map (compliance profile plus backlash hysteresis).
//! 2. [`sensors`] – flex-sensor response, voltage-divider ADC and the
//!    insertion-depth encoders, combined into a [`sensors::ScanReading`].
//! 3. [`datagen`] – replay of the bend/straighten trial protocol, trial CSV
//!    files and the flattened training [`datagen::Dataset`].
//! 4. [`calib`] – the residual regression network, Adam training, metrics
//!    and the binary weights format.
//! 5. [`reconstruct`] – per-joint prediction from a five-marker scan, the
//!    interpolated body curve and per-joint error statistics.
//!
//! All angles at public interfaces are in degrees and all lengths in mm.

pub mod calib;
pub mod config;
pub mod datagen;
pub mod error;
pub mod geom;
pub mod kinematics;
pub mod reconstruct;
pub mod sensors;

pub use error::{Error, Result};
pub use geom::Point2;

/// Number of camera markers along the backbone, and so the number of scan
/// positions per configuration.
pub const MARKER_COUNT: usize = 5;
