//! Planar kinematics of the notched continuum manipulator (CDM).
//!
//! The backbone is a serial chain of `joint_count` equal segments. Joint `i`
//! (1-based) carries a bend angle applied at the proximal end of segment `i`,
//! so joint 1 bends at the base and joint `k` sits at arc length
//! `k * segment_length` from it. Positive angles bend toward +y ("left").
//!
//! Tendon actuation maps motor steps linearly onto a commanded tip angle,
//! splits it over the joints with a [`ComplianceProfile`] and passes each
//! joint through a one-sided backlash (play) operator.

use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::MARKER_COUNT;

/// Tolerance for "weights sum to one" and similar normalization checks.
const WEIGHT_SUM_TOL: f64 = 1e-9;

/// User-facing description of the manipulator, validated into a
/// [`ManipulatorGeometry`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryParams {
    pub joint_count: usize,
    /// mm
    pub steerable_length: f64,
    /// 1-based joint indices carrying the camera markers, base to tip.
    pub marker_joints: [usize; MARKER_COUNT],
    pub max_motor_steps: u32,
    /// degrees
    pub tip_angle_limit: f64,
    /// Distance of the two sensor channels from the centerline, mm.
    pub channel_offset: f64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        Self {
            joint_count: 26,
            steerable_length: 102.14,
            marker_joints: [5, 10, 15, 20, 25],
            max_motor_steps: 1440,
            tip_angle_limit: 90.0,
            channel_offset: 7.5,
        }
    }
}

/// Static description of the CDM. Construct through [`ManipulatorGeometry::new`]
/// so the invariants below always hold:
///
/// - `joint_count > 0`, `segment_length * joint_count == steerable_length`
/// - marker joints strictly increasing, within `1..=joint_count`, equally
///   spaced and starting one spacing from the base, so marker `k` sits at
///   arc length `k * marker_spacing`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManipulatorGeometry {
    params: GeometryParams,
    segment_length: f64,
}

impl Default for ManipulatorGeometry {
    fn default() -> Self {
        Self::new(GeometryParams::default()).expect("default geometry is valid")
    }
}

impl ManipulatorGeometry {
    pub fn new(params: GeometryParams) -> Result<Self> {
        if params.joint_count == 0 {
            return Err(Error::config("geometry.joint_count", "must be positive"));
        }
        if !(params.steerable_length.is_finite() && params.steerable_length > 0.0) {
            return Err(Error::config(
                "geometry.steerable_length",
                "must be a positive length",
            ));
        }
        if params.max_motor_steps == 0 {
            return Err(Error::config("geometry.max_motor_steps", "must be positive"));
        }
        if !(params.tip_angle_limit.is_finite()
            && params.tip_angle_limit > 0.0
            && params.tip_angle_limit <= 180.0)
        {
            return Err(Error::config(
                "geometry.tip_angle_limit",
                "must lie in (0, 180] degrees",
            ));
        }
        if !(params.channel_offset.is_finite() && params.channel_offset >= 0.0) {
            return Err(Error::config(
                "geometry.channel_offset",
                "must be a nonnegative length",
            ));
        }
        let markers = params.marker_joints;
        let key = "geometry.marker_joints";
        if markers[0] == 0 || markers[MARKER_COUNT - 1] > params.joint_count {
            return Err(Error::config(
                key,
                format!("joint indices must lie in 1..={}", params.joint_count),
            ));
        }
        if markers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(key, "joint indices must be strictly increasing"));
        }
        if markers
            .iter()
            .enumerate()
            .any(|(k, &j)| j != (k + 1) * markers[0])
        {
            return Err(Error::config(
                key,
                "markers must be equally spaced and start one spacing from the base",
            ));
        }
        let segment_length = params.steerable_length / params.joint_count as f64;
        Ok(Self {
            params,
            segment_length,
        })
    }

    pub fn params(&self) -> &GeometryParams {
        &self.params
    }

    pub fn joint_count(&self) -> usize {
        self.params.joint_count
    }

    pub fn steerable_length(&self) -> f64 {
        self.params.steerable_length
    }

    pub fn segment_length(&self) -> f64 {
        self.segment_length
    }

    pub fn marker_joints(&self) -> [usize; MARKER_COUNT] {
        self.params.marker_joints
    }

    /// Marker joint for scan index `k` in `1..=5`.
    pub fn marker_joint(&self, k: usize) -> Result<usize> {
        if !(1..=MARKER_COUNT).contains(&k) {
            return Err(Error::invalid(format!(
                "marker index {k} outside 1..={MARKER_COUNT}"
            )));
        }
        Ok(self.params.marker_joints[k - 1])
    }

    /// Arc length between consecutive markers (the encoder step `E`), mm.
    pub fn marker_spacing(&self) -> f64 {
        self.params.marker_joints[0] as f64 * self.segment_length
    }

    pub fn max_motor_steps(&self) -> u32 {
        self.params.max_motor_steps
    }

    pub fn tip_angle_limit(&self) -> f64 {
        self.params.tip_angle_limit
    }

    pub fn channel_offset(&self) -> f64 {
        self.params.channel_offset
    }

    /// Arc position (mm from the base) where joint `joint` (1-based) bends.
    pub fn bend_location(&self, joint: usize) -> f64 {
        (joint - 1) as f64 * self.segment_length
    }

    /// Longest arc a side channel can reach: the outer channel of a maximal
    /// bend is longer than the centerline.
    pub fn max_channel_length(&self) -> f64 {
        self.steerable_length() + self.channel_offset() * self.tip_angle_limit().to_radians()
    }
}

/// Per-joint bend angles and the planar positions they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeState {
    /// degrees, one per joint, positive bends toward +y
    pub joint_angles: Vec<f64>,
    /// Position of the distal end of every segment, base frame, mm.
    pub joint_positions: Vec<Point2>,
    /// degrees
    pub tip_angle: f64,
}

impl ShapeState {
    /// Straight manipulator.
    pub fn straight(geometry: &ManipulatorGeometry) -> Self {
        forward_kinematics(geometry, &vec![0.0; geometry.joint_count()])
            .expect("zero angles are valid")
    }

    /// Position of joint `joint` (1-based).
    pub fn joint_position(&self, joint: usize) -> Point2 {
        self.joint_positions[joint - 1]
    }

    /// Sum of the first `joint` angles, degrees.
    pub fn cumulative_angle(&self, joint: usize) -> f64 {
        self.joint_angles[..joint].iter().sum()
    }

    pub fn marker_positions(&self, geometry: &ManipulatorGeometry) -> [Point2; MARKER_COUNT] {
        geometry.marker_joints().map(|j| self.joint_position(j))
    }
}

/// Serial-chain forward kinematics. The chain leaves the origin along +x.
pub fn forward_kinematics(geometry: &ManipulatorGeometry, joint_angles: &[f64]) -> Result<ShapeState> {
    if joint_angles.len() != geometry.joint_count() {
        return Err(Error::invalid(format!(
            "expected {} joint angles, got {}",
            geometry.joint_count(),
            joint_angles.len()
        )));
    }
    if let Some(i) = joint_angles.iter().position(|a| !a.is_finite()) {
        return Err(Error::invalid(format!("joint angle {} is not finite", i + 1)));
    }
    let length = geometry.segment_length();
    let mut heading = 0.0f64;
    let mut position = Point2::ORIGIN;
    let joint_positions = joint_angles
        .iter()
        .map(|angle| {
            heading += angle.to_radians();
            position = position + Point2::from_polar(length, heading);
            position
        })
        .collect();
    Ok(ShapeState {
        joint_angles: joint_angles.to_vec(),
        joint_positions,
        tip_angle: joint_angles.iter().sum(),
    })
}

/// Total bend of a shape in degrees; equals the heading of the last segment.
pub fn tip_angle(shape: &ShapeState) -> f64 {
    shape.joint_angles.iter().sum()
}

/// Which tendon is pulled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Positive,
    Negative,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Positive => 1.0,
            Direction::Negative => -1.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Direction::Positive => "pos",
            Direction::Negative => "neg",
        }
    }
}

/// Fraction of the commanded tip angle taken by each joint.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplianceProfile {
    weights: Vec<f64>,
}

impl ComplianceProfile {
    /// Weights must be nonnegative and sum to one within 1e-9.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("compliance profile is empty"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("compliance weights must be finite and nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!(
                "compliance weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self { weights })
    }

    pub fn uniform(joint_count: usize) -> Self {
        Self {
            weights: vec![1.0 / joint_count as f64; joint_count],
        }
    }

    /// Weights growing linearly from base to tip: `w_i ∝ 1 + gradient * i / (n - 1)`.
    /// A zero gradient is the uniform profile; positive values concentrate
    /// curvature distally.
    pub fn distal_gradient(joint_count: usize, gradient: f64) -> Result<Self> {
        if !(gradient.is_finite() && gradient > -1.0) {
            return Err(Error::config(
                "tendon.compliance_gradient",
                "must be finite and greater than -1",
            ));
        }
        if joint_count == 1 || gradient == 0.0 {
            return Ok(Self::uniform(joint_count));
        }
        let raw: Vec<f64> = (0..joint_count)
            .map(|i| 1.0 + gradient * i as f64 / (joint_count - 1) as f64)
            .collect();
        let total: f64 = raw.iter().sum();
        Self::new(raw.into_iter().map(|w| w / total).collect())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Motor position of one tendon drive plus the per-joint backlash memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuationState {
    pub motor_steps: u32,
    pub direction: Direction,
    /// Last output angle of every joint's play operator, degrees. Empty
    /// means the chain has never moved (all zero).
    pub hysteresis_memory: Vec<f64>,
}

impl ActuationState {
    pub fn new(direction: Direction) -> Self {
        Self {
            motor_steps: 0,
            direction,
            hysteresis_memory: Vec::new(),
        }
    }
}

/// Tendon drive: compliance profile plus backlash width at the tip.
#[derive(Debug, Clone, PartialEq)]
pub struct TendonModel {
    pub profile: ComplianceProfile,
    /// Total backlash of the tip angle, degrees; joint `i` gets
    /// `backlash_width * weight_i`. Zero disables hysteresis.
    pub backlash_width: f64,
}

impl TendonModel {
    pub fn new(profile: ComplianceProfile, backlash_width: f64) -> Self {
        Self {
            profile,
            backlash_width,
        }
    }

    /// Uniform profile with the default 2° tip backlash.
    pub fn default_for(geometry: &ManipulatorGeometry) -> Self {
        Self::new(ComplianceProfile::uniform(geometry.joint_count()), 2.0)
    }

    pub fn without_hysteresis(mut self) -> Self {
        self.backlash_width = 0.0;
        self
    }

    pub fn angles(&self, geometry: &ManipulatorGeometry, state: &mut ActuationState) -> Result<Vec<f64>> {
        tendon_to_angles(geometry, state, &self.profile, self.backlash_width)
    }
}

/// Joint angles produced by the current motor position.
///
/// The commanded tip angle is `sign * tip_angle_limit * steps / max_steps`;
/// joint `i` is commanded `weight_i` of it. Each joint then passes through a
/// play operator of width `backlash_width * weight_i` that follows the
/// command while loading and lags it while the tendon is released, so the
/// output of a positive bend stays in `[u, u + width]`. The memory in
/// `state` is updated in place.
pub fn tendon_to_angles(
    geometry: &ManipulatorGeometry,
    state: &mut ActuationState,
    profile: &ComplianceProfile,
    backlash_width: f64,
) -> Result<Vec<f64>> {
    let n = geometry.joint_count();
    if state.motor_steps > geometry.max_motor_steps() {
        return Err(Error::invalid(format!(
            "motor steps {} exceed the limit {}",
            state.motor_steps,
            geometry.max_motor_steps()
        )));
    }
    if profile.weights().len() != n {
        return Err(Error::invalid(format!(
            "compliance profile has {} weights for {n} joints",
            profile.weights().len()
        )));
    }
    if !(backlash_width.is_finite() && backlash_width >= 0.0) {
        return Err(Error::invalid("backlash width must be finite and nonnegative"));
    }
    if state.hysteresis_memory.is_empty() {
        state.hysteresis_memory = vec![0.0; n];
    } else if state.hysteresis_memory.len() != n {
        return Err(Error::invalid(format!(
            "hysteresis memory has {} entries for {n} joints",
            state.hysteresis_memory.len()
        )));
    }

    let tip_command = state.direction.sign()
        * geometry.tip_angle_limit()
        * (state.motor_steps as f64 / geometry.max_motor_steps() as f64);

    for (memory, &weight) in state.hysteresis_memory.iter_mut().zip(profile.weights()) {
        let command = weight * tip_command;
        let width = backlash_width * weight;
        *memory = match state.direction {
            Direction::Positive => memory.clamp(command, command + width),
            Direction::Negative => memory.clamp(command - width, command),
        };
    }
    Ok(state.hysteresis_memory.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent chain oracle: compose 2x2 rotation matrices segment by
    /// segment instead of accumulating a heading angle.
    fn chained_rotation_oracle(angles_deg: &[f64], length: f64) -> Vec<Point2> {
        let mut frame = [[1.0, 0.0], [0.0, 1.0]];
        let mut p = Point2::ORIGIN;
        angles_deg
            .iter()
            .map(|a| {
                let (s, c) = a.to_radians().sin_cos();
                let r = [[c, -s], [s, c]];
                frame = [
                    [
                        frame[0][0] * r[0][0] + frame[0][1] * r[1][0],
                        frame[0][0] * r[0][1] + frame[0][1] * r[1][1],
                    ],
                    [
                        frame[1][0] * r[0][0] + frame[1][1] * r[1][0],
                        frame[1][0] * r[0][1] + frame[1][1] * r[1][1],
                    ],
                ];
                p = p + Point2::new(frame[0][0] * length, frame[1][0] * length);
                p
            })
            .collect()
    }

    /// Scalar one-sided play operator driven by a tip command sequence.
    fn scalar_backlash(commands: &[f64], width: f64) -> f64 {
        commands
            .iter()
            .fold(0.0f64, |y, &u| if y < u { u } else if y > u + width { u + width } else { y })
    }

    fn geometry() -> ManipulatorGeometry {
        ManipulatorGeometry::default()
    }

    #[test]
    fn default_geometry_invariants() {
        let g = geometry();
        assert!((g.segment_length() * 26.0 - 102.14).abs() <= 1e-9 * 102.14);
        assert!((g.segment_length() - 3.928_461_538_461_538).abs() < 1e-12);
        assert!((g.marker_spacing() - 19.642_307_692_307_69).abs() < 1e-9);
        let markers = g.marker_joints();
        for w in markers.windows(2) {
            let gap = (w[1] - w[0]) as f64 * g.segment_length();
            assert!((gap - g.marker_spacing()).abs() <= 1e-9 * g.marker_spacing());
        }
    }

    #[test]
    fn geometry_rejects_bad_markers() {
        for markers in [[0, 5, 10, 15, 20], [5, 10, 15, 20, 30], [5, 5, 10, 15, 20], [4, 10, 15, 20, 25]] {
            let err = ManipulatorGeometry::new(GeometryParams {
                marker_joints: markers,
                ..GeometryParams::default()
            })
            .unwrap_err();
            assert!(matches!(err, Error::Config { ref key, .. } if key == "geometry.marker_joints"));
        }
        assert!(ManipulatorGeometry::new(GeometryParams {
            joint_count: 0,
            ..GeometryParams::default()
        })
        .is_err());
    }

    #[test]
    fn straight_chain_positions() {
        let g = geometry();
        let shape = forward_kinematics(&g, &[0.0; 26]).unwrap();
        for (k, p) in shape.joint_positions.iter().enumerate() {
            assert!((p.x - (k + 1) as f64 * 3.928_461_538_461_538).abs() < 1e-12);
            assert_eq!(p.y, 0.0);
        }
        assert_eq!(shape.tip_angle, 0.0);
        assert_eq!(tip_angle(&shape), 0.0);
    }

    #[test]
    fn uniform_quarter_turn_matches_rotation_oracle() {
        let g = geometry();
        let angles = vec![90.0 / 26.0; 26];
        let shape = forward_kinematics(&g, &angles).unwrap();
        let oracle = chained_rotation_oracle(&angles, g.segment_length());
        for (p, q) in shape.joint_positions.iter().zip(&oracle) {
            assert!(p.distance(*q) < 1e-9, "{p:?} vs {q:?}");
        }
        assert!((shape.tip_angle - 90.0).abs() < 1e-12);
        // the regular-polygon chain closes on a circle: tip heading is +y
        let n = shape.joint_positions.len();
        let last = shape.joint_positions[n - 1] - shape.joint_positions[n - 2];
        assert!(last.x.abs() < 1e-12 && last.y > 0.0);
    }

    #[test]
    fn zero_tip_angle_shape_is_not_straight() {
        let g = geometry();
        let mut angles = vec![0.0; 26];
        angles[0] = 10.0;
        angles[1] = -10.0;
        let shape = forward_kinematics(&g, &angles).unwrap();
        assert_eq!(tip_angle(&shape), 0.0);
        let oracle = chained_rotation_oracle(&angles, g.segment_length());
        // joint 1 is lifted off the x-axis, so the chain is not collinear
        assert!(oracle[0].y > 0.5);
        assert!((shape.joint_positions[0].y - oracle[0].y).abs() < 1e-12);
        assert!(shape.joint_positions[25].y > 0.5);
    }

    #[test]
    fn forward_kinematics_rejects_bad_input() {
        let g = geometry();
        assert!(matches!(forward_kinematics(&g, &[0.0; 25]), Err(Error::InvalidInput(_))));
        let mut angles = vec![0.0; 26];
        angles[3] = f64::NAN;
        assert!(matches!(forward_kinematics(&g, &angles), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn zero_steps_is_straight() {
        let g = geometry();
        let tendon = TendonModel::default_for(&g);
        let mut state = ActuationState::new(Direction::Positive);
        let angles = tendon.angles(&g, &mut state).unwrap();
        assert!(angles.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn full_stroke_uniform_without_hysteresis() {
        let g = geometry();
        let tendon = TendonModel::default_for(&g).without_hysteresis();
        let mut state = ActuationState::new(Direction::Positive);
        state.motor_steps = 1440;
        let angles = tendon.angles(&g, &mut state).unwrap();
        for a in angles {
            assert!((a - 3.461_538_461_538_461_5).abs() < 1e-12);
        }
    }

    #[test]
    fn retract_after_full_bend_lags_by_backlash() {
        let g = geometry();
        let tendon = TendonModel::default_for(&g);
        let mut state = ActuationState::new(Direction::Positive);
        let mut commands = Vec::new();
        for steps in (10..=1440).step_by(10).chain((720..1440).step_by(10).rev()) {
            state.motor_steps = steps;
            tendon.angles(&g, &mut state).unwrap();
            commands.push(90.0 * steps as f64 / 1440.0);
        }
        assert_eq!(state.motor_steps, 720);
        let shape = forward_kinematics(&g, &state.hysteresis_memory).unwrap();
        let oracle = scalar_backlash(&commands, 2.0);
        assert!((oracle - 47.0).abs() < 1e-12);
        assert!((shape.tip_angle - oracle).abs() < 1e-9, "{}", shape.tip_angle);
    }

    #[test]
    fn tendon_rejects_bad_profile_and_steps() {
        assert!(ComplianceProfile::new(vec![0.5, 0.4]).is_err());
        assert!(ComplianceProfile::new(vec![0.5, 0.5 + 1e-12]).is_ok());
        let g = geometry();
        let short = ComplianceProfile::uniform(10);
        let mut state = ActuationState::new(Direction::Positive);
        assert!(tendon_to_angles(&g, &mut state, &short, 0.0).is_err());
        state.motor_steps = 1441;
        assert!(tendon_to_angles(&g, &mut state, &ComplianceProfile::uniform(26), 0.0).is_err());
    }

    #[test]
    fn distal_gradient_concentrates_bend_at_tip() {
        let p = ComplianceProfile::distal_gradient(26, 1.0).unwrap();
        let w = p.weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.windows(2).all(|x| x[1] > x[0]));
        assert!((w[25] / w[0] - 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn mirror_equivariance(angles in proptest::collection::vec(-8.0f64..8.0, 26)) {
            let g = geometry();
            let a = forward_kinematics(&g, &angles).unwrap();
            let neg: Vec<f64> = angles.iter().map(|x| -x).collect();
            let b = forward_kinematics(&g, &neg).unwrap();
            for (p, q) in a.joint_positions.iter().zip(&b.joint_positions) {
                prop_assert_eq!(p.mirror_x(), *q);
            }
        }

        #[test]
        fn length_is_conserved(angles in proptest::collection::vec(-15.0f64..15.0, 26)) {
            let g = geometry();
            let s = forward_kinematics(&g, &angles).unwrap();
            let mut total = s.joint_positions[0].norm();
            for w in s.joint_positions.windows(2) {
                let d = w[0].distance(w[1]);
                prop_assert!((d - g.segment_length()).abs() <= 1e-9 * g.segment_length());
                total += d;
            }
            prop_assert!((total - g.steerable_length()).abs() <= 1e-9 * g.steerable_length());
        }

        #[test]
        fn play_output_stays_in_band(steps in proptest::collection::vec(0u32..=1440, 1..60)) {
            let g = geometry();
            let tendon = TendonModel::default_for(&g);
            let mut state = ActuationState::new(Direction::Negative);
            for s in steps {
                state.motor_steps = s;
                let angles = tendon.angles(&g, &mut state).unwrap();
                let tip: f64 = angles.iter().sum();
                let command = -90.0 * s as f64 / 1440.0;
                prop_assert!(tip <= command + 1e-9 && tip >= command - 2.0 - 1e-9);
                prop_assert!(tip.abs() <= 90.0 + 1e-9);
            }
        }
    }
}
