//! Plain-text run manifest.
//!
//! ```text
//! tool = rfs-shape 0.1.0
//! command = gen-data
//! started_unix_s = 1760000000.125
//! finished_unix_s = 1760000001.500
//! seed = 42
//! file = out/trial_j1_r0_pos.csv
//! [config]
//! geometry.joint_count = 26
//! ```

use std::fmt::{Display, Write as _};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rfs_shape::config::Config;
use rfs_shape::datagen::TrialId;

use crate::{runtime, with_path, Failure};

pub struct Manifest {
    command: String,
    started: f64,
    fields: Vec<(String, String)>,
    files: Vec<PathBuf>,
    config: Option<String>,
}

fn unix_seconds() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or_default()
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: unix_seconds(),
            fields: Vec::new(),
            files: Vec::new(),
            config: None,
        }
    }

    pub fn field(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    pub fn file(&mut self, path: &Path) -> &mut Self {
        self.files.push(path.to_path_buf());
        self
    }

    pub fn config(&mut self, config: &Config) -> &mut Self {
        self.config = Some(config.render());
        self
    }

    /// Writes the manifest after checking that every listed file exists.
    pub fn write(&self, path: &Path) -> Result<(), Failure> {
        if let Some(missing) = self.files.iter().find(|f| !f.is_file()) {
            return Err(runtime(format!(
                "manifest lists {} but it was not written",
                missing.display()
            )));
        }
        let mut s = String::new();
        let _ = writeln!(s, "tool = {} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "started_unix_s = {:.3}", self.started);
        let _ = writeln!(s, "finished_unix_s = {:.3}", unix_seconds());
        for (k, v) in &self.fields {
            let _ = writeln!(s, "{k} = {v}");
        }
        for f in &self.files {
            let _ = writeln!(s, "file = {}", f.display());
        }
        if let Some(c) = &self.config {
            let _ = writeln!(s, "[config]");
            s.push_str(c);
        }
        std::fs::write(path, s).map_err(|e| with_path(path, e))
    }
}

/// Trial ids listed under `validation_trials` in a training manifest.
pub fn validation_trials(path: &Path) -> Result<Vec<TrialId>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| with_path(path, e))?;
    let line = text
        .lines()
        .find_map(|l| l.strip_prefix("validation_trials = "))
        .ok_or_else(|| with_path(path, "no validation_trials entry"))?;
    line.split(',')
        .map(|name| {
            TrialId::from_file_name(name.trim())
                .ok_or_else(|| with_path(path, format!("bad trial name `{}`", name.trim())))
        })
        .collect()
}
