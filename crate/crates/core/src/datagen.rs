//! Trial protocol replay, trial CSV files and the flattened training set.
//!
//! A trial drives one tendon from straight to full stroke and back in fixed
//! motor increments, holding the sensors at one marker. Every step yields a
//! row of 14 values: the stabilization-averaged reading `E_L, E_R, R_L, R_R`
//! followed by the base-frame positions of all five markers.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::kinematics::{forward_kinematics, ActuationState, Direction, ManipulatorGeometry, ShapeState, TendonModel};
use crate::sensors::{scan_reading, DriftState, ScanReading, SensorSuite};
use crate::MARKER_COUNT;

/// Values per trial row.
pub const ROW_WIDTH: usize = 4 + 2 * MARKER_COUNT;

/// Significant digits kept in trial rows and CSV cells.
pub const SIGNIFICANT_DIGITS: usize = 9;

pub const CSV_HEADER: [&str; ROW_WIDTH] = [
    "E_L_mm", "E_R_mm", "R_L_ohm", "R_R_ohm", "x1_mm", "y1_mm", "x2_mm", "y2_mm", "x3_mm", "y3_mm",
    "x4_mm", "y4_mm", "x5_mm", "y5_mm",
];

/// Step schedule and averaging of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolParams {
    pub step_increment: u32,
    pub max_steps: u32,
    /// Camera frames averaged for the ground-truth marker positions.
    pub frames_per_step: u32,
    /// Sensor samples averaged into one row.
    pub stabilization_samples: u32,
    /// Averaged rows recorded per motor step.
    pub rows_retained: u32,
    /// Per-coordinate marker localization noise of one frame, mm.
    pub camera_noise_sigma: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            step_increment: 10,
            max_steps: 1440,
            frames_per_step: 5,
            stabilization_samples: 5,
            rows_retained: 1,
            camera_noise_sigma: 0.0,
        }
    }
}

impl ProtocolParams {
    pub fn validate(&self, geometry: &ManipulatorGeometry) -> Result<()> {
        if self.step_increment == 0 {
            return Err(Error::config("trial.step_increment", "must be positive"));
        }
        if self.max_steps == 0 || self.max_steps % self.step_increment != 0 {
            return Err(Error::config(
                "trial.max_steps",
                "must be a positive multiple of trial.step_increment",
            ));
        }
        if self.max_steps > geometry.max_motor_steps() {
            return Err(Error::config(
                "trial.max_steps",
                "exceeds geometry.max_motor_steps",
            ));
        }
        if self.frames_per_step == 0 {
            return Err(Error::config("trial.frames_per_step", "must be at least 1"));
        }
        if self.stabilization_samples == 0 {
            return Err(Error::config("trial.stabilization_samples", "must be at least 1"));
        }
        if self.rows_retained == 0 {
            return Err(Error::config("trial.rows_retained", "must be at least 1"));
        }
        if !(self.camera_noise_sigma >= 0.0 && self.camera_noise_sigma.is_finite()) {
            return Err(Error::config("trial.camera_noise_sigma", "must be nonnegative"));
        }
        Ok(())
    }

    /// Motor positions visited: up in increments to `max_steps`, then back to 0.
    pub fn schedule(&self) -> impl Iterator<Item = u32> {
        let inc = self.step_increment;
        let n = self.max_steps / inc;
        (1..=n).map(move |i| i * inc).chain((0..n).rev().map(move |i| i * inc))
    }

    pub fn rows_per_trial(&self) -> usize {
        2 * (self.max_steps / self.step_increment) as usize * self.rows_retained as usize
    }
}

/// Identity of a trial: scanned marker, repetition and bending direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrialId {
    pub joint_index: usize,
    pub rep: u32,
    pub direction: Direction,
}

impl TrialId {
    pub fn file_name(&self) -> String {
        format!(
            "trial_j{}_r{}_{}.csv",
            self.joint_index,
            self.rep,
            self.direction.tag()
        )
    }

    /// Inverse of [`TrialId::file_name`].
    pub fn from_file_name(name: &str) -> Option<Self> {
        let stem = name.strip_prefix("trial_j")?.strip_suffix(".csv")?;
        let (joint, rest) = stem.split_once("_r")?;
        let (rep, dir) = rest.split_once('_')?;
        let direction = match dir {
            "pos" => Direction::Positive,
            "neg" => Direction::Negative,
            _ => return None,
        };
        let joint_index: usize = joint.parse().ok()?;
        if !(1..=MARKER_COUNT).contains(&joint_index) {
            return None;
        }
        Some(Self {
            joint_index,
            rep: rep.parse().ok()?,
            direction,
        })
    }

    /// Independent random stream of this trial under a shared seed.
    fn stream(&self) -> u64 {
        let dir = matches!(self.direction, Direction::Negative) as u64;
        ((self.joint_index as u64) << 40) | ((self.rep as u64) << 8) | (dir << 1)
    }
}

impl fmt::Display for TrialId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "j{} r{} {}", self.joint_index, self.rep, self.direction.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub id: TrialId,
    pub seed: u64,
    pub protocol: ProtocolParams,
}

/// One logged step: averaged reading plus all marker positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRow {
    pub e_left: f64,
    pub e_right: f64,
    pub r_left: f64,
    pub r_right: f64,
    pub markers: [Point2; MARKER_COUNT],
}

impl TrialRow {
    /// Builds a row with every value rounded to [`SIGNIFICANT_DIGITS`], so a
    /// row and its CSV image hold identical numbers.
    pub fn new(e_left: f64, e_right: f64, r_left: f64, r_right: f64, markers: [Point2; MARKER_COUNT]) -> Self {
        let mut values = [0.0; ROW_WIDTH];
        values[..4].copy_from_slice(&[e_left, e_right, r_left, r_right]);
        for (k, p) in markers.iter().enumerate() {
            values[4 + 2 * k] = p.x;
            values[5 + 2 * k] = p.y;
        }
        Self::from_values(values.map(round_significant))
    }

    fn from_values(v: [f64; ROW_WIDTH]) -> Self {
        Self {
            e_left: v[0],
            e_right: v[1],
            r_left: v[2],
            r_right: v[3],
            markers: std::array::from_fn(|k| Point2::new(v[4 + 2 * k], v[5 + 2 * k])),
        }
    }

    /// CSV column order.
    pub fn values(&self) -> [f64; ROW_WIDTH] {
        let mut v = [0.0; ROW_WIDTH];
        v[..4].copy_from_slice(&[self.e_left, self.e_right, self.r_left, self.r_right]);
        for (k, p) in self.markers.iter().enumerate() {
            v[4 + 2 * k] = p.x;
            v[5 + 2 * k] = p.y;
        }
        v
    }

    pub fn reading(&self, joint_index: usize) -> ScanReading {
        ScanReading {
            r_left: self.r_left,
            r_right: self.r_right,
            e_left: self.e_left,
            e_right: self.e_right,
            joint_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub id: TrialId,
    pub rows: Vec<TrialRow>,
}

/// Everything needed to simulate the bench.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulator {
    pub geometry: ManipulatorGeometry,
    pub tendon: TendonModel,
    pub sensors: SensorSuite,
    pub protocol: ProtocolParams,
}

impl Default for Simulator {
    fn default() -> Self {
        let geometry = ManipulatorGeometry::default();
        Self {
            tendon: TendonModel::default_for(&geometry),
            geometry,
            sensors: SensorSuite::default(),
            protocol: ProtocolParams::default(),
        }
    }
}

impl Simulator {
    pub fn noiseless(&self) -> Self {
        Self {
            sensors: self.sensors.noiseless(),
            protocol: ProtocolParams {
                camera_noise_sigma: 0.0,
                ..self.protocol.clone()
            },
            ..self.clone()
        }
    }

    pub fn trial_config(&self, id: TrialId, seed: u64) -> TrialConfig {
        TrialConfig {
            id,
            seed,
            protocol: self.protocol.clone(),
        }
    }

    /// `5 joints x reps x 2 directions` trials, ordered by joint, rep, direction.
    pub fn generate(&self, reps: u32, seed: u64) -> Result<Vec<TrialRecord>> {
        trial_ids(reps)
            .map(|id| run_trial(&self.trial_config(id, seed), &self.geometry, &self.tendon, &self.sensors))
            .collect()
    }

    /// Shape reached by bending from straight to `tip_angle` degrees.
    pub fn shape_at_tip_angle(&self, tip_angle: f64) -> Result<ShapeState> {
        let limit = self.geometry.tip_angle_limit();
        if !(tip_angle.abs() <= limit) {
            return Err(Error::invalid(format!(
                "tip angle {tip_angle} outside ±{limit}"
            )));
        }
        let direction = if tip_angle < 0.0 { Direction::Negative } else { Direction::Positive };
        let mut state = ActuationState::new(direction);
        let target = (tip_angle.abs() / limit * self.geometry.max_motor_steps() as f64).round() as u32;
        let inc = self.protocol.step_increment.max(1);
        let mut steps = 0;
        while steps < target {
            steps = (steps + inc).min(target);
            state.motor_steps = steps;
            self.tendon.angles(&self.geometry, &mut state)?;
        }
        let angles = self.tendon.angles(&self.geometry, &mut state)?;
        forward_kinematics(&self.geometry, &angles)
    }

    /// Stabilization-averaged readings at all five markers of a frozen shape.
    pub fn scan<R: Rng + ?Sized>(&self, shape: &ShapeState, rng: &mut R) -> Result<Vec<ScanReading>> {
        let mut drift = DriftState::default();
        (1..=MARKER_COUNT)
            .map(|k| {
                averaged_reading(
                    shape,
                    k,
                    &self.geometry,
                    &self.sensors,
                    self.protocol.stabilization_samples,
                    &mut drift,
                    rng,
                )
            })
            .collect()
    }
}

pub fn trial_ids(reps: u32) -> impl Iterator<Item = TrialId> {
    (1..=MARKER_COUNT).flat_map(move |joint_index| {
        (0..reps).flat_map(move |rep| {
            [Direction::Positive, Direction::Negative].map(|direction| TrialId {
                joint_index,
                rep,
                direction,
            })
        })
    })
}

/// Mean of `samples` consecutive raw readings.
pub fn averaged_reading<R: Rng + ?Sized>(
    shape: &ShapeState,
    joint_index: usize,
    geometry: &ManipulatorGeometry,
    sensors: &SensorSuite,
    samples: u32,
    drift: &mut DriftState,
    rng: &mut R,
) -> Result<ScanReading> {
    let mut sum = [0.0; 4];
    for _ in 0..samples {
        let r = scan_reading(shape, joint_index, geometry, sensors, drift, rng)?;
        for (s, v) in sum.iter_mut().zip(r.features()) {
            *s += v;
        }
    }
    let n = samples as f64;
    Ok(ScanReading {
        r_left: sum[0] / n,
        r_right: sum[1] / n,
        e_left: sum[2] / n,
        e_right: sum[3] / n,
        joint_index,
    })
}

/// Replays one bend-and-straighten cycle. Backlash memory and sensor drift
/// carry over the whole trial. Ground truth draws from its own random stream,
/// so sensor noise never touches the marker columns.
pub fn run_trial(
    config: &TrialConfig,
    geometry: &ManipulatorGeometry,
    tendon: &TendonModel,
    sensors: &SensorSuite,
) -> Result<TrialRecord> {
    let protocol = &config.protocol;
    protocol.validate(geometry)?;
    sensors.validate()?;
    geometry.marker_joint(config.id.joint_index)?;

    let mut sensor_rng = ChaCha8Rng::seed_from_u64(config.seed);
    sensor_rng.set_stream(config.id.stream());
    let mut camera_rng = ChaCha8Rng::seed_from_u64(config.seed);
    camera_rng.set_stream(config.id.stream() | 1);
    let camera_noise = (protocol.camera_noise_sigma > 0.0)
        .then(|| Normal::new(0.0, protocol.camera_noise_sigma).expect("finite sigma"));

    let mut state = ActuationState::new(config.id.direction);
    let mut drift = DriftState::default();
    let mut rows = Vec::with_capacity(protocol.rows_per_trial());
    for steps in protocol.schedule() {
        state.motor_steps = steps;
        let angles = tendon.angles(geometry, &mut state)?;
        let shape = forward_kinematics(geometry, &angles)?;
        let truth = shape.marker_positions(geometry);
        for _ in 0..protocol.rows_retained {
            let reading = averaged_reading(
                &shape,
                config.id.joint_index,
                geometry,
                sensors,
                protocol.stabilization_samples,
                &mut drift,
                &mut sensor_rng,
            )?;
            let markers = match &camera_noise {
                None => truth,
                Some(noise) => truth.map(|p| {
                    let frames = protocol.frames_per_step as f64;
                    let mut acc = Point2::ORIGIN;
                    for _ in 0..protocol.frames_per_step {
                        acc = acc + p + Point2::new(noise.sample(&mut camera_rng), noise.sample(&mut camera_rng));
                    }
                    acc * (1.0 / frames)
                }),
            };
            rows.push(TrialRow::new(
                reading.e_left,
                reading.e_right,
                reading.r_left,
                reading.r_right,
                markers,
            ));
        }
    }
    Ok(TrialRecord { id: config.id, rows })
}

/// Maps world points into the frame whose origin is the midpoint of the base
/// reference pair and whose +x axis points from `base_pair[0]` to `base_pair[1]`.
pub fn base_frame_transform(points: &[Point2], base_pair: [Point2; 2]) -> Result<Vec<Point2>> {
    let axis = base_pair[1] - base_pair[0];
    let len = axis.norm();
    if !(len > 0.0) {
        return Err(Error::Degenerate("base reference points coincide".into()));
    }
    let origin = (base_pair[0] + base_pair[1]) * 0.5;
    let (c, s) = (axis.x / len, axis.y / len);
    Ok(points
        .iter()
        .map(|&p| {
            let d = p - origin;
            Point2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
        })
        .collect())
}

/// One training pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    /// `[R_L, R_R, E_L, E_R]`
    pub features: [f64; 4],
    /// Position of the scanned marker, mm.
    pub target: Point2,
    pub joint_index: usize,
    /// Index into [`Dataset::trials`].
    pub trial: usize,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub trials: Vec<TrialId>,
}

/// Flattens trials into samples, keeping per-trial provenance.
pub fn build_dataset(records: &[TrialRecord]) -> Result<Dataset> {
    if records.is_empty() {
        return Err(Error::invalid("no trials to build a dataset from"));
    }
    let mut seen = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if let Some(prev) = seen.insert(r.id, i) {
            return Err(Error::invalid(format!(
                "trial {} appears twice (positions {prev} and {i})",
                r.id
            )));
        }
    }
    let samples = records
        .iter()
        .enumerate()
        .flat_map(|(t, record)| {
            let joint = record.id.joint_index;
            record.rows.iter().enumerate().map(move |(row, r)| Sample {
                features: r.reading(joint).features(),
                target: r.markers[joint - 1],
                joint_index: joint,
                trial: t,
                row,
            })
        })
        .collect();
    Ok(Dataset {
        samples,
        trials: records.iter().map(|r| r.id).collect(),
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples from the listed trials, in dataset order.
    pub fn subset(&self, trials: &[usize]) -> Dataset {
        let keep: std::collections::BTreeSet<_> = trials.iter().copied().collect();
        Dataset {
            samples: self.samples.iter().filter(|s| keep.contains(&s.trial)).copied().collect(),
            trials: self.trials.clone(),
        }
    }

    /// Picks roughly `fraction` of the trials for validation. Trials are
    /// grouped by (joint, direction); a group never loses its last training
    /// trial while another choice is available, and groups are visited
    /// round-robin, every joint before any joint's second direction, so
    /// held-out trials spread across the configuration space.
    pub fn split_trials(&self, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::invalid(format!(
                "validation fraction {fraction} outside (0, 1)"
            )));
        }
        let n = self.trials.len();
        if n < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 trials for a trial-level split, got {n}"
            )));
        }
        let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut groups: BTreeMap<(usize, Direction), Vec<usize>> = BTreeMap::new();
        for &t in &order {
            let id = self.trials[t];
            groups.entry((id.joint_index, id.direction)).or_default().push(t);
        }
        let mut group_order: Vec<_> = groups.keys().copied().collect();
        group_order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
        // every marker before any marker's second direction
        let mut visits: BTreeMap<usize, usize> = BTreeMap::new();
        let mut ranked: Vec<_> = group_order
            .into_iter()
            .map(|key| {
                let n = visits.entry(key.0).or_default();
                *n += 1;
                (*n, key)
            })
            .collect();
        ranked.sort_by_key(|&(rank, _)| rank);
        let group_order: Vec<_> = ranked.into_iter().map(|(_, key)| key).collect();

        let mut validation = Vec::with_capacity(n_val);
        let mut allow_last = false;
        while validation.len() < n_val {
            let mut picked = false;
            for key in &group_order {
                if validation.len() == n_val {
                    break;
                }
                let members = groups.get_mut(key).expect("key from map");
                if members.len() > 1 || (allow_last && !members.is_empty()) {
                    validation.push(members.remove(0));
                    picked = true;
                }
            }
            if !picked {
                allow_last = true;
            }
        }
        validation.sort_unstable();
        let train = (0..n).filter(|t| !validation.contains(t)).collect();
        Ok((train, validation))
    }
}

/// Rounds to [`SIGNIFICANT_DIGITS`] through the decimal representation.
pub fn round_significant(v: f64) -> f64 {
    format_significant(v).parse().expect("formatted float parses")
}

/// Plain decimal text with [`SIGNIFICANT_DIGITS`] significant digits.
pub fn format_significant(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v);
    let exponent: i32 = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .expect("scientific format has an exponent");
    let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exponent).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.starts_with("-0") && s.trim_start_matches(['-', '0', '.']).is_empty() {
        return "0".into();
    }
    s
}

pub fn write_trial_csv<W: Write>(rows: &[TrialRow], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let map = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(map)?;
    for row in rows {
        w.write_record(row.values().map(format_significant)).map_err(map)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses trial rows; `path` only labels errors.
pub fn read_trial_csv<R: Read>(reader: R, path: Option<&Path>) -> Result<Vec<TrialRow>> {
    let records = read_cells(reader, path)?;
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.map(Path::to_path_buf),
        line,
        message,
    };
    let mut iter = records.into_iter();
    match iter.next() {
        Some((_, cells)) if cells == CSV_HEADER => {}
        Some((line, _)) => return Err(parse_err(line, format!("missing header `{}`", CSV_HEADER.join(",")))),
        None => return Err(parse_err(1, "empty file, missing header".into())),
    }
    iter.map(|(line, cells)| {
        if cells.len() != ROW_WIDTH {
            return Err(parse_err(
                line,
                format!("expected {ROW_WIDTH} columns, found {}", cells.len()),
            ));
        }
        let mut values = [0.0; ROW_WIDTH];
        for (i, cell) in cells.iter().enumerate() {
            values[i] = parse_cell(cell).ok_or_else(|| {
                parse_err(line, format!("column {} (`{}`): `{cell}` is not a number", i + 1, CSV_HEADER[i]))
            })?;
        }
        Ok(TrialRow::from_values(values))
    })
    .collect()
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn read_cells<R: Read>(reader: R, path: Option<&Path>) -> Result<Vec<(u64, Vec<String>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for result in rdr.records() {
        let record = result.map_err(|e| Error::Parse {
            path: path.map(Path::to_path_buf),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        out.push((line, record.iter().map(str::to_owned).collect()));
    }
    Ok(out)
}

/// Writes `record` to `path`.
pub fn to_csv(record: &TrialRecord, path: &Path) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    write_trial_csv(&record.rows, file)
}

/// Reads a trial file; the trial identity comes from its canonical file name.
pub fn from_csv(path: &Path) -> Result<TrialRecord> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let id = TrialId::from_file_name(name).ok_or_else(|| {
        Error::invalid(format!(
            "`{}` is not a trial file name (expected trial_j<joint>_r<rep>_<pos|neg>.csv)",
            path.display()
        ))
    })?;
    let rows = read_trial_csv(File::open(path)?, Some(path))?;
    Ok(TrialRecord { id, rows })
}

/// Every trial file in `dir`, sorted by file name.
pub fn load_trials(dir: &Path) -> Result<Vec<TrialRecord>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| TrialId::from_file_name(n).is_some())
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| from_csv(p)).collect()
}

/// Header of a single-configuration scan file.
pub const SCAN_HEADER: [&str; 7] = ["joint", "E_L_mm", "E_R_mm", "R_L_ohm", "R_R_ohm", "x_mm", "y_mm"];

/// Reading of one marker plus its ground-truth position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRow {
    pub reading: ScanReading,
    pub truth: Point2,
}

pub fn write_scan_csv<W: Write>(rows: &[ScanRow], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let map = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(SCAN_HEADER).map_err(map)?;
    for row in rows {
        let r = &row.reading;
        let mut cells = vec![r.joint_index.to_string()];
        cells.extend(
            [r.e_left, r.e_right, r.r_left, r.r_right, row.truth.x, row.truth.y].map(format_significant),
        );
        w.write_record(&cells).map_err(map)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scan_csv<R: Read>(reader: R, path: Option<&Path>) -> Result<Vec<ScanRow>> {
    let records = read_cells(reader, path)?;
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.map(Path::to_path_buf),
        line,
        message,
    };
    let mut iter = records.into_iter();
    match iter.next() {
        Some((_, cells)) if cells == SCAN_HEADER => {}
        Some((line, _)) => return Err(parse_err(line, format!("missing header `{}`", SCAN_HEADER.join(",")))),
        None => return Err(parse_err(1, "empty file, missing header".into())),
    }
    iter.map(|(line, cells)| {
        if cells.len() != SCAN_HEADER.len() {
            return Err(parse_err(
                line,
                format!("expected {} columns, found {}", SCAN_HEADER.len(), cells.len()),
            ));
        }
        let joint_index: usize = cells[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("joint `{}` is not an integer", cells[0])))?;
        let mut v = [0.0; 6];
        for (i, cell) in cells[1..].iter().enumerate() {
            v[i] = parse_cell(cell).ok_or_else(|| {
                parse_err(line, format!("column {} (`{}`): `{cell}` is not a number", i + 2, SCAN_HEADER[i + 1]))
            })?;
        }
        Ok(ScanRow {
            reading: ScanReading {
                e_left: v[0],
                e_right: v[1],
                r_left: v[2],
                r_right: v[3],
                joint_index,
            },
            truth: Point2::new(v[4], v[5]),
        })
    })
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{forward_kinematics, ComplianceProfile};
    use proptest::prelude::*;

    fn sim() -> Simulator {
        Simulator::default()
    }

    fn id(joint: usize, direction: Direction) -> TrialId {
        TrialId {
            joint_index: joint,
            rep: 0,
            direction,
        }
    }

    #[test]
    fn row_count_and_first_row() {
        let s = sim();
        let rec = run_trial(&s.trial_config(id(2, Direction::Positive), 1), &s.geometry, &s.tendon, &s.sensors).unwrap();
        assert_eq!(rec.rows.len(), 288);
        assert_eq!(s.protocol.rows_per_trial(), 288);
        // first step commands 90° * 10 / 1440 on the loading branch
        let mut state = ActuationState::new(Direction::Positive);
        state.motor_steps = 10;
        let angles = s.tendon.angles(&s.geometry, &mut state).unwrap();
        let shape = forward_kinematics(&s.geometry, &angles).unwrap();
        assert!((shape.tip_angle - 0.625).abs() < 1e-12);
        let first = rec.rows[0];
        for (p, q) in first.markers.iter().zip(shape.marker_positions(&s.geometry)) {
            assert!(p.distance(q) < 1e-6);
        }
        // the averaged resistance is close to flat (integrated bend ≈ 0.24°)
        assert!((first.r_left - 25_000.0).abs() < 600.0, "{}", first.r_left);
        assert!((first.r_right - 25_000.0).abs() < 600.0, "{}", first.r_right);
    }

    #[test]
    fn hysteresis_separates_bend_and_straighten_rows() {
        let s = sim().noiseless();
        let cfg = s.trial_config(id(5, Direction::Positive), 3);
        let on = run_trial(&cfg, &s.geometry, &s.tendon, &s.sensors).unwrap();
        let off_tendon = s.tendon.clone().without_hysteresis();
        let off = run_trial(&cfg, &s.geometry, &off_tendon, &s.sensors).unwrap();
        // bending row for step 720 is index 71, straightening row is 287 - 72
        let (bend, straighten) = (71, 287 - 72);
        assert_eq!(on.rows[bend].markers, off.rows[bend].markers);
        assert_ne!(on.rows[bend].markers, on.rows[straighten].markers);
        assert_eq!(off.rows[bend], off.rows[straighten]);
        // the straightening branch lags by the 2° backlash at the tip
        let tip = |r: &TrialRow| r.markers[4];
        assert!(tip(&on.rows[straighten]).y > tip(&on.rows[bend]).y);
    }

    #[test]
    fn identical_seeds_give_identical_csv_bytes() {
        let s = sim();
        let cfg = s.trial_config(id(3, Direction::Negative), 42);
        let bytes = |r: &TrialRecord| {
            let mut buf = Vec::new();
            write_trial_csv(&r.rows, &mut buf).unwrap();
            buf
        };
        let a = run_trial(&cfg, &s.geometry, &s.tendon, &s.sensors).unwrap();
        let b = run_trial(&cfg, &s.geometry, &s.tendon, &s.sensors).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        let other = run_trial(&s.trial_config(id(3, Direction::Negative), 43), &s.geometry, &s.tendon, &s.sensors).unwrap();
        assert_ne!(bytes(&a), bytes(&other));
    }

    #[test]
    fn ground_truth_ignores_sensor_noise() {
        let s = sim();
        let cfg = s.trial_config(id(4, Direction::Positive), 5);
        let noisy = run_trial(&cfg, &s.geometry, &s.tendon, &s.sensors).unwrap();
        let quiet = run_trial(&cfg, &s.geometry, &s.tendon, &s.sensors.noiseless()).unwrap();
        for (a, b) in noisy.rows.iter().zip(&quiet.rows) {
            assert_eq!(a.markers, b.markers);
        }
        assert!(noisy.rows.iter().zip(&quiet.rows).any(|(a, b)| a.r_left != b.r_left));
    }

    #[test]
    fn averaging_divides_variance() {
        let s = sim();
        // fine ADC so quantization does not mask the read noise
        let mut sensors = s.sensors.clone();
        sensors.adc.resolution_bits = 16;
        sensors.left.drift_step_sigma = 0.0;
        sensors.right.drift_step_sigma = 0.0;
        let shape = forward_kinematics(&s.geometry, &[1.0; 26]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let variance = |samples: u32, rng: &mut ChaCha8Rng| {
            let xs: Vec<f64> = (0..1000)
                .map(|_| {
                    averaged_reading(&shape, 3, &s.geometry, &sensors, samples, &mut DriftState::default(), rng)
                        .unwrap()
                        .r_left
                })
                .collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
        };
        let single = variance(1, &mut rng);
        let averaged = variance(5, &mut rng);
        let expected = single / 5.0;
        // sampling error of a variance estimate over 1000 draws is ≈ sqrt(2/999)
        let tol = 3.0 * (2.0f64 / 999.0).sqrt() * expected * 3.0;
        assert!((averaged - expected).abs() < tol, "{averaged} vs {expected}");
    }

    #[test]
    fn base_frame_fixtures() {
        let pair = [Point2::new(-4.0, 0.0), Point2::new(4.0, 0.0)];
        let pts = vec![Point2::new(1.0, 2.0), Point2::new(-3.0, 0.5)];
        assert_eq!(base_frame_transform(&pts, pair).unwrap(), pts);

        let shift = Point2::new(12.5, -7.25);
        let moved: Vec<_> = pts.iter().map(|&p| p + shift).collect();
        let moved_pair = pair.map(|p| p + shift);
        let out = base_frame_transform(&moved, moved_pair).unwrap();
        for (a, b) in out.iter().zip(&pts) {
            assert!(a.distance(*b) < 1e-12);
        }
        let same = [Point2::new(1.0, 1.0); 2];
        assert!(matches!(base_frame_transform(&pts, same), Err(Error::Degenerate(_))));
    }

    #[test]
    fn dataset_counts_and_order_independence() {
        let s = sim();
        let records: Vec<_> = trial_ids(1)
            .take(3)
            .map(|id| run_trial(&s.trial_config(id, 9), &s.geometry, &s.tendon, &s.sensors).unwrap())
            .collect();
        let ds = build_dataset(&records).unwrap();
        assert_eq!(ds.len(), 3 * 288);
        let one = build_dataset(&records[..1]).unwrap();
        assert!(one.samples.iter().all(|x| x.joint_index == records[0].id.joint_index));
        for sample in &ds.samples {
            let rec = &records[sample.trial];
            assert_eq!(sample.target, rec.rows[sample.row].markers[sample.joint_index - 1]);
        }

        let mut reversed = records.clone();
        reversed.reverse();
        let ds2 = build_dataset(&reversed).unwrap();
        let key = |d: &Dataset| {
            let mut v: Vec<String> = d
                .samples
                .iter()
                .map(|x| format!("{} {} {:?} {:?}", d.trials[x.trial], x.row, x.features, x.target))
                .collect();
            v.sort();
            v
        };
        assert_eq!(key(&ds), key(&ds2));

        assert!(build_dataset(&[]).is_err());
        let dup = vec![records[0].clone(), records[0].clone()];
        assert!(build_dataset(&dup).is_err());
    }

    #[test]
    fn fifteen_trials_give_4320_samples() {
        let s = sim();
        let records: Vec<_> = trial_ids(3)
            .filter(|id| id.rep == 0 || id.direction == Direction::Positive)
            .take(15)
            .map(|id| run_trial(&s.trial_config(id, 1), &s.geometry, &s.tendon, &s.sensors).unwrap())
            .collect();
        assert_eq!(build_dataset(&records).unwrap().len(), 4320);
    }

    #[test]
    fn split_keeps_every_group_in_training() {
        let trials: Vec<TrialId> = trial_ids(3).collect();
        let ds = Dataset {
            samples: Vec::new(),
            trials: trials.clone(),
        };
        for seed in 0..20 {
            let (train, val) = ds.split_trials(0.2, seed).unwrap();
            assert_eq!(val.len(), 6);
            assert_eq!(train.len() + val.len(), 30);
            for joint in 1..=5 {
                for dir in [Direction::Positive, Direction::Negative] {
                    assert!(train
                        .iter()
                        .any(|&t| trials[t].joint_index == joint && trials[t].direction == dir));
                }
                assert!(val.iter().any(|&t| trials[t].joint_index == joint), "seed {seed}: joint {joint} not held out");
            }
        }
        assert!(ds.split_trials(0.0, 1).is_err());
        let single = Dataset {
            samples: Vec::new(),
            trials: trials[..1].to_vec(),
        };
        assert!(single.split_trials(0.2, 1).is_err());
    }

    #[test]
    fn csv_round_trip_and_straight_columns() {
        let s = sim().noiseless();
        let rec = run_trial(&s.trial_config(id(1, Direction::Positive), 2), &s.geometry, &s.tendon, &s.sensors).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(rec.id.file_name());
        to_csv(&rec, &path).unwrap();
        let back = from_csv(&path).unwrap();
        assert_eq!(back, rec);

        // the straightened end of the trial is exactly straight again only
        // without backlash; use a fresh straight shape for the column check
        let straight = ShapeState::straight(&s.geometry);
        let row = TrialRow::new(1.0, 1.0, 1.0, 1.0, straight.marker_positions(&s.geometry));
        let mut buf = Vec::new();
        write_trial_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cells: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(cells.len(), 14);
        let x1: f64 = cells[4].parse().unwrap();
        assert!((x1 - 5.0 * s.geometry.segment_length()).abs() < 1e-7);
        assert_eq!(cells[5], "0");
    }

    #[test]
    fn csv_errors_name_the_line() {
        let header = CSV_HEADER.join(",");
        let good = vec!["1"; 14].join(",");
        let short = vec!["1"; 13].join(",");
        let text = format!("{header}\n{good}\n{short}\n");
        match read_trial_csv(text.as_bytes(), None) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("14"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let bad = format!("{header}\n{}\n", vec!["1"; 13].join(",") + ",abc");
        assert!(matches!(read_trial_csv(bad.as_bytes(), None), Err(Error::Parse { line: 2, .. })));
        let headless = format!("{good}\n");
        assert!(matches!(read_trial_csv(headless.as_bytes(), None), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn file_names_round_trip() {
        for id in trial_ids(3) {
            assert_eq!(TrialId::from_file_name(&id.file_name()), Some(id));
        }
        assert_eq!(TrialId::from_file_name("trial_j6_r0_pos.csv"), None);
        assert_eq!(TrialId::from_file_name("trial_j1_r0_up.csv"), None);
    }

    #[test]
    fn non_uniform_profile_still_runs() {
        let mut s = sim();
        s.tendon.profile = ComplianceProfile::distal_gradient(26, 1.5).unwrap();
        let rec = run_trial(&s.trial_config(id(5, Direction::Negative), 4), &s.geometry, &s.tendon, &s.sensors).unwrap();
        assert!(rec.rows[143].markers[4].y < -40.0);
    }

    #[test]
    fn shape_at_tip_angle_hits_target() {
        let s = sim();
        for angle in [-90.0, -45.0, 0.0, 30.0, 90.0] {
            let shape = s.shape_at_tip_angle(angle).unwrap();
            assert!((shape.tip_angle - angle).abs() < 1e-9);
        }
        assert!(s.shape_at_tip_angle(91.0).is_err());
    }

    #[test]
    fn scan_file_round_trip() {
        let s = sim();
        let shape = s.shape_at_tip_angle(40.0).unwrap();
        let readings = s.scan(&shape, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let truth = shape.marker_positions(&s.geometry);
        let rows: Vec<ScanRow> = readings
            .iter()
            .zip(truth)
            .map(|(r, t)| ScanRow { reading: *r, truth: t })
            .collect();
        let mut buf = Vec::new();
        write_scan_csv(&rows, &mut buf).unwrap();
        let back = read_scan_csv(buf.as_slice(), None).unwrap();
        assert_eq!(back.len(), 5);
        for (a, b) in back.iter().zip(&rows) {
            assert_eq!(a.reading.joint_index, b.reading.joint_index);
            assert!((a.reading.r_left - b.reading.r_left).abs() <= 5e-9 * b.reading.r_left.abs());
            assert!(a.truth.distance(b.truth) < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn significant_rounding_is_idempotent(v in -1e6f64..1e6) {
            let once = format_significant(v);
            let parsed: f64 = once.parse().unwrap();
            prop_assert_eq!(format_significant(parsed), once.clone());
            if v != 0.0 {
                prop_assert!((parsed - v).abs() <= 5e-9 * v.abs());
            }
        }

        #[test]
        fn rigid_motion_is_undone(
            angle in -3.2f64..3.2,
            tx in -100.0f64..100.0,
            ty in -100.0f64..100.0,
            pts in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..12),
        ) {
            let pair = [Point2::new(-6.0, 0.0), Point2::new(6.0, 0.0)];
            let local: Vec<Point2> = pts.iter().map(|&(x, y)| Point2::new(x, y)).collect();
            let t = Point2::new(tx, ty);
            let world: Vec<Point2> = local.iter().map(|p| p.rotate(angle) + t).collect();
            let world_pair = pair.map(|p| p.rotate(angle) + t);
            let back = base_frame_transform(&world, world_pair).unwrap();
            for (a, b) in back.iter().zip(&local) {
                prop_assert!(a.distance(*b) < 1e-9);
            }
        }
    }
}
