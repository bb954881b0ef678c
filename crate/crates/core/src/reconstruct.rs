//! Shape reconstruction from a five-marker scan and per-joint error
//! statistics.
//!
//! The body curve is a C1 parametric cubic Hermite spline through the base
//! and the markers, with chord-length knots and Bessel tangents. Joint
//! stations are placed by arc length inside each piece so that every marker
//! joint lands exactly on its marker, and stations past the last marker are
//! extrapolated along the end tangent.

use std::fmt;
use std::io::Write;

use crate::calib::CalibModel;
use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::kinematics::ManipulatorGeometry;
use crate::sensors::ScanReading;
use crate::MARKER_COUNT;

/// One reading per marker under a frozen configuration, ordered by joint.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSet {
    readings: [ScanReading; MARKER_COUNT],
}

impl ScanSet {
    /// Accepts the readings in any order; joints `1..=5` must each appear
    /// exactly once.
    pub fn new(readings: &[ScanReading]) -> Result<Self> {
        if readings.len() != MARKER_COUNT {
            return Err(Error::invalid(format!(
                "a scan needs {MARKER_COUNT} readings, got {}",
                readings.len()
            )));
        }
        let mut slots: [Option<ScanReading>; MARKER_COUNT] = [None; MARKER_COUNT];
        for r in readings {
            if !(1..=MARKER_COUNT).contains(&r.joint_index) {
                return Err(Error::invalid(format!(
                    "scan joint index {} outside 1..={MARKER_COUNT}",
                    r.joint_index
                )));
            }
            let slot = &mut slots[r.joint_index - 1];
            if slot.is_some() {
                return Err(Error::invalid(format!("joint {} scanned twice", r.joint_index)));
            }
            *slot = Some(*r);
        }
        Ok(Self {
            readings: slots.map(|s| s.expect("five distinct joints fill every slot")),
        })
    }

    pub fn readings(&self) -> &[ScanReading; MARKER_COUNT] {
        &self.readings
    }

    pub fn validate(&self, geometry: &ManipulatorGeometry) -> Result<()> {
        self.readings.iter().try_for_each(|r| r.validate(geometry))
    }
}

/// Marker positions predicted from a scan plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPrediction {
    /// Joint 1 to 5, base frame, mm.
    pub positions: [Point2; MARKER_COUNT],
    pub warnings: Vec<String>,
}

/// Normalized feature magnitude beyond which a reading is flagged as far
/// outside the training distribution.
const EXTRAPOLATION_Z: f64 = 6.0;

/// Runs the model on every reading of the scan.
pub fn predict_joints(model: &CalibModel, scan: &ScanSet) -> Result<JointPrediction> {
    let features: Vec<[f64; 4]> = scan.readings.iter().map(|r| r.features()).collect();
    let predicted = model.predict_batch(&features)?;
    let positions: [Point2; MARKER_COUNT] = predicted.try_into().expect("one prediction per reading");

    let mut warnings = Vec::new();
    let first = positions[0];
    if positions.iter().all(|p| p.distance(first) < 1e-9) {
        warnings.push(
            "model gives the same position for every joint; it looks untrained or degenerate".to_string(),
        );
    }
    for r in &scan.readings {
        let z = model.input_norm.apply(&r.features());
        if z.iter().any(|v| v.abs() > EXTRAPOLATION_Z) {
            warnings.push(format!(
                "joint {} reading is far outside the training range (normalized {z:.1?})",
                r.joint_index
            ));
        }
    }
    Ok(JointPrediction { positions, warnings })
}

const GAUSS_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GAUSS_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];
const QUADRATURE_PANELS: usize = 4;

/// C1 cubic Hermite curve through a sequence of points.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCurve {
    knots: Vec<Point2>,
    /// Unit-speed-scale tangents with respect to chord length.
    tangents: Vec<Point2>,
    chords: Vec<f64>,
    piece_lengths: Vec<f64>,
}

impl ShapeCurve {
    /// Interpolates `points` in order. Consecutive points must be distinct and
    /// no chord may turn back by 90° or more relative to the previous one.
    pub fn through(points: &[Point2]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("a curve needs at least two points"));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("point {i} is not finite")));
        }
        let chords: Vec<f64> = points.windows(2).map(|w| w[0].distance(w[1])).collect();
        let scale = chords.iter().copied().fold(0.0, f64::max);
        if let Some(i) = chords.iter().position(|&h| !(h > 1e-9 * scale.max(1.0))) {
            return Err(Error::Degenerate(format!("points {i} and {} coincide", i + 1)));
        }
        let dirs: Vec<Point2> = points
            .windows(2)
            .zip(&chords)
            .map(|(w, &h)| (w[1] - w[0]) * (1.0 / h))
            .collect();
        if let Some(i) = dirs.windows(2).position(|d| d[0].dot(d[1]) <= 0.0) {
            return Err(Error::Degenerate(format!(
                "arc ordering is not monotone: the path turns back at point {}",
                i + 1
            )));
        }

        let n = points.len();
        let mut tangents = vec![Point2::ORIGIN; n];
        if n == 2 {
            tangents = vec![dirs[0]; 2];
        } else {
            for i in 1..n - 1 {
                let (h0, h1) = (chords[i - 1], chords[i]);
                tangents[i] = (dirs[i - 1] * h1 + dirs[i] * h0) * (1.0 / (h0 + h1));
            }
            let (h0, h1) = (chords[0], chords[1]);
            tangents[0] = dirs[0] * ((2.0 * h0 + h1) / (h0 + h1)) - dirs[1] * (h0 / (h0 + h1));
            let (a, b) = (chords[n - 3], chords[n - 2]);
            tangents[n - 1] = dirs[n - 2] * ((2.0 * b + a) / (a + b)) - dirs[n - 3] * (b / (a + b));
        }

        let mut curve = Self {
            knots: points.to_vec(),
            tangents,
            chords,
            piece_lengths: Vec::new(),
        };
        curve.piece_lengths = (0..n - 1).map(|i| curve.arc_in_piece(i, 1.0)).collect();
        Ok(curve)
    }

    pub fn knots(&self) -> &[Point2] {
        &self.knots
    }

    pub fn pieces(&self) -> usize {
        self.chords.len()
    }

    pub fn piece_length(&self, piece: usize) -> f64 {
        self.piece_lengths[piece]
    }

    pub fn length(&self) -> f64 {
        self.piece_lengths.iter().sum()
    }

    /// Point at parameter `t ∈ [0, 1]` of a piece.
    pub fn eval(&self, piece: usize, t: f64) -> Point2 {
        let (p0, p1) = (self.knots[piece], self.knots[piece + 1]);
        let h = self.chords[piece];
        let (m0, m1) = (self.tangents[piece] * h, self.tangents[piece + 1] * h);
        let (t2, t3) = (t * t, t * t * t);
        p0 * (2.0 * t3 - 3.0 * t2 + 1.0)
            + m0 * (t3 - 2.0 * t2 + t)
            + p1 * (-2.0 * t3 + 3.0 * t2)
            + m1 * (t3 - t2)
    }

    fn derivative(&self, piece: usize, t: f64) -> Point2 {
        let (p0, p1) = (self.knots[piece], self.knots[piece + 1]);
        let h = self.chords[piece];
        let (m0, m1) = (self.tangents[piece] * h, self.tangents[piece + 1] * h);
        let t2 = t * t;
        p0 * (6.0 * t2 - 6.0 * t) + m0 * (3.0 * t2 - 4.0 * t + 1.0) + p1 * (-6.0 * t2 + 6.0 * t) + m1 * (3.0 * t2 - 2.0 * t)
    }

    /// Arc length from the start of a piece to parameter `t`.
    fn arc_in_piece(&self, piece: usize, t: f64) -> f64 {
        let panel = t / QUADRATURE_PANELS as f64;
        let mut sum = 0.0;
        for p in 0..QUADRATURE_PANELS {
            let mid = (p as f64 + 0.5) * panel;
            for (x, w) in GAUSS_NODES.iter().zip(GAUSS_WEIGHTS) {
                sum += w * self.derivative(piece, mid + 0.5 * panel * x).norm();
            }
        }
        sum * 0.5 * panel
    }

    /// Parameter of the point at arc length `s` from the piece start.
    fn param_at_arc(&self, piece: usize, s: f64) -> f64 {
        let total = self.piece_lengths[piece];
        if s <= 0.0 {
            return 0.0;
        }
        if s >= total {
            return 1.0;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut t = s / total;
        for _ in 0..60 {
            let f = self.arc_in_piece(piece, t) - s;
            if f.abs() < 1e-12 * total.max(1.0) {
                break;
            }
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let speed = self.derivative(piece, t).norm();
            let newton = t - f / speed;
            t = if speed > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        t
    }

    /// Point at arc length `s` from the first knot. Beyond either end the
    /// curve continues straight along the end tangent.
    pub fn point_at_arc(&self, s: f64) -> Point2 {
        if s < 0.0 {
            let d = self.tangents[0] * (1.0 / self.tangents[0].norm());
            return self.knots[0] + d * s;
        }
        let mut rest = s;
        for piece in 0..self.pieces() {
            let len = self.piece_lengths[piece];
            if rest <= len {
                return self.eval(piece, self.param_at_arc(piece, rest));
            }
            rest -= len;
        }
        self.extrapolate(rest)
    }

    fn extrapolate(&self, beyond: f64) -> Point2 {
        let end = *self.tangents.last().expect("at least two knots");
        *self.knots.last().expect("at least two knots") + end * (beyond / end.norm())
    }

    /// Point at a fraction of a piece's arc length.
    pub fn point_in_piece(&self, piece: usize, fraction: f64) -> Point2 {
        let t = self.param_at_arc(piece, fraction * self.piece_lengths[piece]);
        self.eval(piece, t)
    }

    /// `count` points evenly spaced in arc length from start to end.
    pub fn sample(&self, count: usize) -> Vec<Point2> {
        let len = self.length();
        match count {
            0 => Vec::new(),
            1 => vec![self.knots[0]],
            _ => (0..count)
                .map(|i| self.point_at_arc(len * i as f64 / (count - 1) as f64))
                .collect(),
        }
    }
}

/// Interpolated body with one station per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedShape {
    pub curve: ShapeCurve,
    /// Joint 1 to `joint_count`, base frame, mm.
    pub stations: Vec<Point2>,
}

/// Builds the body curve through `base` and the five markers and samples it
/// at every joint. Station `j` sits at nominal arc `j * segment_length`,
/// mapped proportionally onto the interpolant's arc length inside the piece
/// that contains it.
pub fn reconstruct_shape(
    geometry: &ManipulatorGeometry,
    base: Point2,
    markers: &[Point2; MARKER_COUNT],
) -> Result<ReconstructedShape> {
    let mut points = vec![base];
    points.extend_from_slice(markers);
    let curve = ShapeCurve::through(&points)?;

    let seg = geometry.segment_length();
    let mut knot_arcs = vec![0.0];
    knot_arcs.extend(geometry.marker_joints().map(|j| j as f64 * seg));
    let last_arc = *knot_arcs.last().expect("base plus markers");

    let stations = (1..=geometry.joint_count())
        .map(|j| {
            let s = j as f64 * seg;
            if s > last_arc {
                return curve.extrapolate(s - last_arc);
            }
            let piece = knot_arcs
                .windows(2)
                .position(|w| s <= w[1])
                .expect("s within the knot range");
            let (a, b) = (knot_arcs[piece], knot_arcs[piece + 1]);
            if s == b {
                return curve.knots[piece + 1];
            }
            curve.point_in_piece(piece, (s - a) / (b - a))
        })
        .collect();
    Ok(ReconstructedShape { curve, stations })
}

/// Mean and standard error of a set of per-sample errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub count: usize,
    /// mm
    pub mean: f64,
    /// Sample standard deviation (n − 1) over √n, mm; 0 for a single sample.
    pub standard_error: f64,
}

impl ErrorStats {
    pub fn of(errors: &[f64]) -> Self {
        let n = errors.len();
        let mean = errors.iter().sum::<f64>() / n as f64;
        let standard_error = if n > 1 {
            let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            count: n,
            mean,
            standard_error,
        }
    }
}

/// Per-joint and pooled Euclidean error statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    /// `(joint, stats)` in increasing joint order.
    pub per_joint: Vec<(usize, ErrorStats)>,
    /// Pooled over all samples.
    pub total: ErrorStats,
}

/// Euclidean error of each prediction, grouped by the joint it belongs to.
pub fn joint_errors(joints: &[usize], predicted: &[Point2], truth: &[Point2]) -> Result<ErrorReport> {
    if predicted.len() != truth.len() || joints.len() != truth.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} joints, {} predictions, {} ground-truth points",
            joints.len(),
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("no samples to evaluate"));
    }
    let errors: Vec<f64> = predicted.iter().zip(truth).map(|(p, t)| p.distance(*t)).collect();
    if let Some(i) = errors.iter().position(|e| !e.is_finite()) {
        return Err(Error::invalid(format!("sample {i} has a non-finite error")));
    }
    let mut grouped: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    for (&j, &e) in joints.iter().zip(&errors) {
        grouped.entry(j).or_default().push(e);
    }
    Ok(ErrorReport {
        per_joint: grouped.into_iter().map(|(j, e)| (j, ErrorStats::of(&e))).collect(),
        total: ErrorStats::of(&errors),
    })
}

pub const ERROR_CSV_HEADER: &str = "joint,count,mean_error_mm,standard_error_mm";

impl ErrorReport {
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "{ERROR_CSV_HEADER}")?;
        let rows = self
            .per_joint
            .iter()
            .map(|(j, s)| (j.to_string(), s))
            .chain(std::iter::once(("total".to_string(), &self.total)));
        for (label, s) in rows {
            writeln!(writer, "{label},{},{},{}", s.count, s.mean, s.standard_error)?;
        }
        Ok(())
    }
}

/// Aligned table with one column per joint and a pooled total column.
impl fmt::Display for ErrorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const LABEL: usize = 20;
        const CELL: usize = 10;
        write!(f, "{:<LABEL$}", "")?;
        for (j, _) in &self.per_joint {
            write!(f, "{:>CELL$}", format!("Joint {j}"))?;
        }
        writeln!(f, "{:>CELL$}", "Total")?;
        let stats: Vec<&ErrorStats> = self.per_joint.iter().map(|(_, s)| s).chain([&self.total]).collect();
        write!(f, "{:<LABEL$}", "Average err (mm)")?;
        for s in &stats {
            write!(f, "{:>CELL$.3}", s.mean)?;
        }
        writeln!(f)?;
        write!(f, "{:<LABEL$}", "Standard err (mm)")?;
        for s in &stats {
            write!(f, "{:>CELL$.3}", s.standard_error)?;
        }
        writeln!(f)?;
        write!(f, "{:<LABEL$}", "Samples")?;
        for s in &stats {
            write!(f, "{:>CELL$}", s.count)?;
        }
        writeln!(f)
    }
}
