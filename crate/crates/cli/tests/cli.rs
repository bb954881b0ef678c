use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

/// Small network so training runs in seconds. A constant rate, since the
/// default decay would leave a 3-epoch run barely trained.
const SMALL: &str = "train.hidden = 16\ntrain.blocks = 1\ntrain.batch_size = 32\ntrain.lr_schedule = constant\n";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfs-shape")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    files
}

fn gen_data(dir: &TempDir, name: &str, reps: &str) -> PathBuf {
    let out = dir.path().join(name);
    ok(&["gen-data", "--out", s(&out), "--reps", reps, "--seed", "42"]);
    out
}

#[test]
fn gen_data_writes_thirty_trials_and_reruns_identically() {
    let dir = TempDir::new().unwrap();
    let a = gen_data(&dir, "a", "3");
    let b = gen_data(&dir, "b", "3");
    let (fa, fb) = (csv_files(&a), csv_files(&b));
    assert_eq!(fa.len(), 30);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
    let first = fs::read_to_string(&fa[0]).unwrap();
    assert_eq!(first.lines().count(), 289);
    assert_eq!(first.lines().next().unwrap().split(',').count(), 14);

    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 42"));
    assert_eq!(manifest.lines().filter(|l| l.starts_with("file = ")).count(), 30);
    assert!(manifest.contains("[config]"));
}

#[test]
fn invalid_marker_joints_is_a_usage_error_naming_the_key() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "bad.conf", "geometry.marker_joints = 5, 10, 15, 20, 40\n");
    let out = run(&["gen-data", "--config", s(&config), "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("geometry.marker_joints"));
}

#[test]
fn unknown_config_key_and_missing_arguments_exit_two() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "bad.conf", "rfs.bogus = 1\n");
    let out = run(&["gen-data", "--config", s(&config), "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rfs.bogus"));
    assert_eq!(run(&["train"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn zero_epochs_saves_the_initial_model_deterministically() {
    let dir = TempDir::new().unwrap();
    let data = gen_data(&dir, "d", "1");
    let config = write(&dir, "small.conf", SMALL);
    let (m1, m2) = (dir.path().join("m1.bin"), dir.path().join("m2.bin"));
    for m in [&m1, &m2] {
        let out = ok(&["train", "--data", s(&data), "--out", s(m), "--config", s(&config), "--epochs", "0"]);
        assert!(out.contains("0 epochs"));
    }
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
    let history = fs::read_to_string(dir.path().join("m1.bin.history.csv")).unwrap();
    assert_eq!(history.trim(), "epoch,train_loss,val_loss,val_r2,val_rmse_mm");
}

#[test]
fn training_rejects_a_single_trial() {
    let dir = TempDir::new().unwrap();
    let data = gen_data(&dir, "d", "1");
    for f in csv_files(&data).into_iter().skip(1) {
        fs::remove_file(f).unwrap();
    }
    let out = run(&["train", "--data", s(&data), "--out", s(&dir.path().join("m.bin")), "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_eval_reconstruct_and_bench() {
    let dir = TempDir::new().unwrap();
    let data = gen_data(&dir, "d", "1");
    let config = write(&dir, "small.conf", SMALL);
    let model = dir.path().join("m.bin");
    let out = ok(&["train", "--data", s(&data), "--out", s(&model), "--config", s(&config), "--epochs", "3", "--quiet"]);
    assert!(out.contains("final validation loss"), "{out}");
    let history = fs::read_to_string(dir.path().join("m.bin.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    let manifest_path = dir.path().join("m.bin.manifest.txt");
    let manifest = fs::read_to_string(&manifest_path).unwrap();
    assert!(manifest.contains("validation_trials = "));
    assert!(manifest.contains("train.epochs = 3"));

    let table = ok(&["eval", "--model", s(&model), "--data", s(&data)]);
    assert!(table.contains("10 trials, 2880 samples"), "{table}");
    for label in ["Average err (mm)", "Standard err (mm)", "Joint 5", "Total", "R² "] {
        assert!(table.contains(label), "{label} missing from\n{table}");
    }
    let csv = dir.path().join("errors.csv");
    let held_out = ok(&["eval", "--model", s(&model), "--data", s(&data), "--manifest", s(&manifest_path), "--csv", s(&csv)]);
    assert!(held_out.contains("2 trials, 576 samples"), "{held_out}");
    let rows = fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().next().unwrap(), "joint,count,mean_error_mm,standard_error_mm");

    let scan = dir.path().join("scan.csv");
    ok(&["gen-scan", "--tip-angle", "-45", "--seed", "3", "--out", s(&scan)]);
    let (svg1, svg2) = (dir.path().join("a.svg"), dir.path().join("b.svg"));
    let printed = ok(&["reconstruct", "--model", s(&model), "--scan", s(&scan), "--out", s(&svg1)]);
    ok(&["reconstruct", "--model", s(&model), "--scan", s(&scan), "--out", s(&svg2)]);
    assert_eq!(printed.lines().count(), 6);
    let bytes = fs::read(&svg1).unwrap();
    assert_eq!(bytes, fs::read(&svg2).unwrap());
    assert!(bytes.starts_with(b"<svg"));
    let stations = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(stations.lines().next().unwrap(), "joint,arc_mm,x_mm,y_mm");
    assert_eq!(stations.lines().count(), 27);

    let bench = ok(&["bench", "--model", s(&model), "--iterations", "200", "--warmup", "10"]);
    for key in ["mean", "median", "p99"] {
        assert!(bench.lines().any(|l| l.starts_with(key) && l.ends_with(" ms")), "{bench}");
    }
    assert!(bench.contains("single precision"));
    let double = ok(&["bench", "--model", s(&model), "--iterations", "50", "--warmup", "0", "--double"]);
    assert!(double.contains("double precision"), "{double}");
}

#[test]
fn malformed_scan_names_the_line() {
    let dir = TempDir::new().unwrap();
    let scan = dir.path().join("scan.csv");
    ok(&["gen-scan", "--tip-angle", "30", "--out", s(&scan)]);
    let text = fs::read_to_string(&scan).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    lines[2] = lines[2].replacen(',', ",abc,", 1);
    fs::write(&scan, lines.join("\n") + "\n").unwrap();

    let model = dir.path().join("m.bin");
    let data = gen_data(&dir, "d", "1");
    let config = write(&dir, "small.conf", SMALL);
    ok(&["train", "--data", s(&data), "--out", s(&model), "--config", s(&config), "--epochs", "0"]);
    let out = run(&["reconstruct", "--model", s(&model), "--scan", s(&scan), "--out", s(&dir.path().join("x.svg"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn corrupt_model_is_rejected() {
    let dir = TempDir::new().unwrap();
    let model = write(&dir, "m.bin", "not a model");
    let out = run(&["bench", "--model", s(&model), "--iterations", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}
