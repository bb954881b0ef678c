//! `rfs-shape`: data generation, calibration training, evaluation,
//! reconstruction and latency benchmarking for the simulated RFS bench.

mod manifest;
mod svg;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rfs_shape::calib::{self, save_history_csv, CalibModel, Predictor, TrainConfig};
use rfs_shape::config::Config;
use rfs_shape::datagen::{self, build_dataset, load_trials, ScanRow};
use rfs_shape::reconstruct::{joint_errors, predict_joints, reconstruct_shape, ScanSet};
use rfs_shape::{Error, Point2};

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "rfs-shape", version, about = "Simulated RFS shape sensing and learned calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the trial protocol and write one CSV per trial plus a manifest.
    GenData {
        /// key = value config file; defaults apply without one.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        reps: u32,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        noise: Switch,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train the calibration network on a directory of trial CSVs.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Weights file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides train.epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// History CSV; defaults to `<out>.history.csv`.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Suppress per-epoch progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Per-joint error table of a model on trial CSVs.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Restrict to the validation trials recorded in a training manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Simulate a five-marker scan of one bend and write it as a scan CSV.
    GenScan {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Tip angle of the frozen configuration, degrees.
        #[arg(long, allow_negative_numbers = true)]
        tip_angle: f64,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        noise: Switch,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict the markers of a scan and draw the reconstructed body.
    Reconstruct {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// SVG overlay to write.
        #[arg(long)]
        out: PathBuf,
        /// Sampled joint stations; defaults to the SVG path with a .csv extension.
        #[arg(long)]
        shape_csv: Option<PathBuf>,
    },
    /// Single-sample inference latency.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        iterations: usize,
        #[arg(long, default_value_t = 1_000)]
        warmup: usize,
        /// Time the double-precision path instead of the single-precision predictor.
        #[arg(long)]
        double: bool,
    },
}

/// Failure with its exit code: 2 for usage and configuration errors, 1 for
/// everything that fails at run time.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Config { .. }) { 2 } else { 1 };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

fn runtime(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn with_path(path: &Path, e: impl std::fmt::Display) -> Failure {
    runtime(format!("{}: {e}", path.display()))
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::GenData {
            config,
            out,
            reps,
            noise,
            seed,
        } => gen_data(config.as_deref(), &out, reps, noise, seed),
        Command::Train {
            data,
            out,
            config,
            epochs,
            seed,
            history,
            quiet,
        } => train(&data, &out, config.as_deref(), epochs, seed, history, quiet),
        Command::Eval {
            model,
            data,
            manifest,
            csv,
        } => eval(&model, &data, manifest.as_deref(), csv.as_deref()),
        Command::GenScan {
            config,
            tip_angle,
            noise,
            seed,
            out,
        } => gen_scan(config.as_deref(), tip_angle, noise, seed, &out),
        Command::Reconstruct {
            model,
            scan,
            config,
            out,
            shape_csv,
        } => reconstruct(&model, &scan, config.as_deref(), &out, shape_csv),
        Command::Bench {
            model,
            iterations,
            warmup,
            double,
        } => bench(&model, iterations, warmup, double),
    }
}

/// Config errors of any kind, including unreadable or malformed files, are
/// usage errors.
fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    match path {
        None => Ok(Config::default()),
        Some(p) => Config::load(p).map_err(|e| Failure {
            code: 2,
            message: format!("{}: {e}", p.display()),
        }),
    }
}

fn load_model(path: &Path) -> Result<CalibModel, Failure> {
    calib::load_model(path).map_err(|e| with_path(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| with_path(path, e))
}

fn gen_data(config_path: Option<&Path>, out: &Path, reps: u32, noise: Switch, seed: u64) -> CliResult {
    let config = load_config(config_path)?;
    if reps == 0 {
        return Err(Failure {
            code: 2,
            message: "--reps must be at least 1".into(),
        });
    }
    let mut manifest = Manifest::new("gen-data");
    let mut sim = config.simulator()?;
    if noise == Switch::Off {
        sim = sim.noiseless();
    }
    fs::create_dir_all(out).map_err(|e| with_path(out, e))?;
    let records = sim.generate(reps, seed)?;
    for record in &records {
        let path = out.join(record.id.file_name());
        datagen::to_csv(record, &path).map_err(|e| with_path(&path, e))?;
        manifest.file(&path);
    }
    manifest
        .field("seed", seed)
        .field("reps", reps)
        .field("noise", if noise == Switch::On { "on" } else { "off" })
        .field("trials", records.len())
        .field("rows_per_trial", sim.protocol.rows_per_trial())
        .config(&config);
    let manifest_path = out.join("manifest.txt");
    manifest.write(&manifest_path)?;
    println!("wrote {} trials to {}", records.len(), out.display());
    Ok(())
}

fn train(
    data: &Path,
    out: &Path,
    config_path: Option<&Path>,
    epochs: Option<usize>,
    seed: Option<u64>,
    history: Option<PathBuf>,
    quiet: bool,
) -> CliResult {
    let config = load_config(config_path)?;
    let train_config = TrainConfig {
        epochs: epochs.unwrap_or(config.train.epochs),
        seed: seed.unwrap_or(config.train.seed),
        ..config.train.clone()
    };
    train_config.validate()?;
    let mut manifest = Manifest::new("train");
    let records = load_trials(data).map_err(|e| with_path(data, e))?;
    if records.len() < 2 {
        return Err(runtime(format!(
            "{}: found {} trial files, training needs at least 2",
            data.display(),
            records.len()
        )));
    }
    let dataset = build_dataset(&records)?;
    let total = train_config.epochs;
    let outcome = calib::train_with_progress(&dataset, &train_config, |e| {
        if !quiet && (e.epoch == 1 || e.epoch % 10 == 0 || e.epoch == total) {
            eprintln!(
                "epoch {:>4}/{total}  train {:.4e}  val {:.4e}  R² {:.5}  RMSE {:.3} mm  ({:.1} s)",
                e.epoch, e.train_loss, e.val_loss, e.val_r2, e.val_rmse_mm, e.seconds
            );
        }
    })?;

    calib::save_model(&outcome.model, out).map_err(|e| with_path(out, e))?;
    let history_path = history.unwrap_or_else(|| suffixed(out, ".history.csv"));
    save_history_csv(&outcome.history, &history_path).map_err(|e| with_path(&history_path, e))?;

    let names = |idx: &[usize]| -> String {
        idx.iter()
            .map(|&t| dataset.trials[t].file_name())
            .collect::<Vec<_>>()
            .join(", ")
    };
    manifest
        .field("data", data.display())
        .field("seed", train_config.seed)
        .field("epochs", train_config.epochs)
        .field("samples", dataset.len())
        .field("train_trials", names(&outcome.train_trials))
        .field("validation_trials", names(&outcome.validation_trials))
        .file(out)
        .file(&history_path);
    let mut run_config = config.clone();
    run_config.train = train_config;
    manifest.config(&run_config);
    manifest.write(&suffixed(out, ".manifest.txt"))?;

    match outcome.history.last() {
        Some(last) => println!(
            "final validation loss {:.6e}  R² {:.6}  RMSE {:.4} mm",
            last.val_loss, last.val_r2, last.val_rmse_mm
        ),
        None => println!("0 epochs: saved the initialized model"),
    }
    Ok(())
}

/// `path` with `suffix` appended to its file name.
fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn eval(model_path: &Path, data: &Path, manifest: Option<&Path>, csv: Option<&Path>) -> CliResult {
    let model = load_model(model_path)?;
    let mut records = load_trials(data).map_err(|e| with_path(data, e))?;
    if let Some(m) = manifest {
        let keep = manifest::validation_trials(m)?;
        records.retain(|r| keep.contains(&r.id));
        if records.len() != keep.len() {
            return Err(runtime(format!(
                "{}: {} of the {} validation trials are missing",
                data.display(),
                keep.len() - records.len(),
                keep.len()
            )));
        }
    }
    if records.is_empty() {
        return Err(runtime(format!("{}: no trial files found", data.display())));
    }
    let dataset = build_dataset(&records)?;
    let features: Vec<[f64; 4]> = dataset.samples.iter().map(|s| s.features).collect();
    let truth: Vec<Point2> = dataset.samples.iter().map(|s| s.target).collect();
    let joints: Vec<usize> = dataset.samples.iter().map(|s| s.joint_index).collect();
    let predicted = model.predict_batch(&features)?;
    let report = joint_errors(&joints, &predicted, &truth)?;
    println!("{} trials, {} samples", records.len(), dataset.len());
    print!("{report}");
    if let Ok(r2) = calib::r_squared(&predicted, &truth) {
        println!("R² {r2:.6}");
    }
    if let Some(path) = csv {
        let mut w = create(path)?;
        report.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn gen_scan(config_path: Option<&Path>, tip_angle: f64, noise: Switch, seed: u64, out: &Path) -> CliResult {
    let config = load_config(config_path)?;
    let mut sim = config.simulator()?;
    if noise == Switch::Off {
        sim = sim.noiseless();
    }
    let shape = sim.shape_at_tip_angle(tip_angle)?;
    let readings = sim.scan(&shape, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let truth = shape.marker_positions(&sim.geometry);
    let rows: Vec<ScanRow> = readings
        .into_iter()
        .zip(truth)
        .map(|(reading, truth)| ScanRow { reading, truth })
        .collect();
    let mut w = create(out)?;
    datagen::write_scan_csv(&rows, &mut w)?;
    w.flush()?;
    println!("wrote scan of a {tip_angle}° bend to {}", out.display());
    Ok(())
}

fn reconstruct(
    model_path: &Path,
    scan_path: &Path,
    config_path: Option<&Path>,
    out: &Path,
    shape_csv: Option<PathBuf>,
) -> CliResult {
    let config = load_config(config_path)?;
    let geometry = config.simulator()?.geometry;
    let model = load_model(model_path)?;
    let file = File::open(scan_path).map_err(|e| with_path(scan_path, e))?;
    let rows = datagen::read_scan_csv(file, Some(scan_path))?;
    let readings: Vec<_> = rows.iter().map(|r| r.reading).collect();
    let scan = ScanSet::new(&readings).map_err(|e| with_path(scan_path, e))?;
    scan.validate(&geometry).map_err(|e| with_path(scan_path, e))?;
    let prediction = predict_joints(&model, &scan)?;
    for w in &prediction.warnings {
        eprintln!("warning: {w}");
    }
    let mut truth = [Point2::ORIGIN; rfs_shape::MARKER_COUNT];
    for r in &rows {
        truth[r.reading.joint_index - 1] = r.truth;
    }
    let shape = reconstruct_shape(&geometry, Point2::ORIGIN, &prediction.positions)?;

    let mut w = create(out)?;
    w.write_all(svg::render(&shape, &prediction.positions, &truth).as_bytes())?;
    w.flush()?;
    let csv_path = shape_csv.unwrap_or_else(|| out.with_extension("csv"));
    let mut w = create(&csv_path)?;
    writeln!(w, "joint,arc_mm,x_mm,y_mm")?;
    for (j, p) in shape.stations.iter().enumerate() {
        let arc = (j + 1) as f64 * geometry.segment_length();
        writeln!(w, "{},{arc:.6},{:.6},{:.6}", j + 1, p.x, p.y)?;
    }
    w.flush()?;

    println!("joint   predicted (mm)          truth (mm)           error (mm)");
    for (k, (p, t)) in prediction.positions.iter().zip(&truth).enumerate() {
        println!(
            "{:>5}   ({:>8.3}, {:>8.3})   ({:>8.3}, {:>8.3})   {:>8.3}",
            k + 1,
            p.x,
            p.y,
            t.x,
            t.y,
            p.distance(*t)
        );
    }
    Ok(())
}

fn bench(model_path: &Path, iterations: usize, warmup: usize, double: bool) -> CliResult {
    if iterations == 0 {
        return Err(Failure {
            code: 2,
            message: "--iterations must be at least 1".into(),
        });
    }
    let model = load_model(model_path)?;
    // the training mean is a representative in-distribution reading
    let m = &model.input_norm.mean;
    let features = [m[0], m[1], m[2], m[3]];
    let predictor = Predictor::new(&model);
    let forward = |f: [f64; 4]| if double { model.forward(f) } else { predictor.forward(f) };
    for _ in 0..warmup {
        std::hint::black_box(forward(std::hint::black_box(features))?);
    }
    let mut times = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let start = Instant::now();
        std::hint::black_box(forward(std::hint::black_box(features))?);
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let stats = LatencyStats::of(times);
    let precision = if double { "double" } else { "single" };
    println!("iterations {iterations} (after {warmup} warmup), {precision} precision");
    println!("mean   {:.4} ms", stats.mean);
    println!("median {:.4} ms", stats.median);
    println!("p99    {:.4} ms", stats.p99);
    Ok(())
}

struct LatencyStats {
    mean: f64,
    median: f64,
    p99: f64,
}

impl LatencyStats {
    fn of(mut times: Vec<f64>) -> Self {
        times.sort_by(f64::total_cmp);
        let n = times.len();
        let at = |q: f64| times[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
        Self {
            mean: times.iter().sum::<f64>() / n as f64,
            median: at(0.5),
            p99: at(0.99),
        }
    }
}
