use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::linalg::Real;
use super::metrics::{r_squared, rmse};
use super::model::{batch_loss_and_grads, Architecture, CalibModel, Normalizer, FEATURES, OUTPUTS};
use super::network::{Network, Workspace};
use crate::datagen::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::geom::Point2;

/// Arithmetic used for the optimization loop. The returned model is always
/// stored in `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    Single,
    Double,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay per optimizer step from the base rate down to
    /// `final_fraction` of it.
    Cosine { final_fraction: f64 },
    /// The base rate for the first `hold_fraction` of the steps, then
    /// geometric decay per step down to `final_fraction` of it.
    Exponential { final_fraction: f64, hold_fraction: f64 },
}

impl LrSchedule {
    fn factor(&self, step: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine { final_fraction } => {
                let t = if total <= 1 { 0.0 } else { step as f64 / (total - 1) as f64 };
                final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
            LrSchedule::Exponential { final_fraction, hold_fraction } => {
                let t = if total <= 1 { 0.0 } else { step as f64 / (total - 1) as f64 };
                if t <= hold_fraction {
                    1.0
                } else {
                    final_fraction.powf((t - hold_fraction) / (1.0 - hold_fraction))
                }
            }
        }
    }

    pub fn final_fraction(&self) -> Option<f64> {
        match *self {
            LrSchedule::Constant => None,
            LrSchedule::Cosine { final_fraction } | LrSchedule::Exponential { final_fraction, .. } => Some(final_fraction),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Share of trials held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
    pub architecture: Architecture,
    pub precision: Precision,
    pub schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            batch_size: 64,
            epochs: 200,
            validation_fraction: 0.2,
            seed: 0,
            architecture: Architecture::default(),
            precision: Precision::Single,
            schedule: LrSchedule::Exponential { final_fraction: 1e-4, hold_fraction: 0.5 },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config("train.validation_fraction", "must lie in (0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config("train.beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("train.beta2", "must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("train.epsilon", "must be positive"));
        }
        if self.architecture.hidden == 0 {
            return Err(Error::config("train.hidden", "must be positive"));
        }
        match self.schedule {
            LrSchedule::Constant => {}
            LrSchedule::Cosine { final_fraction } => {
                if !(0.0..=1.0).contains(&final_fraction) {
                    return Err(Error::config("train.lr_final_fraction", "must lie in [0, 1]"));
                }
            }
            LrSchedule::Exponential { final_fraction, hold_fraction } => {
                if !(final_fraction > 0.0 && final_fraction <= 1.0) {
                    return Err(Error::config("train.lr_final_fraction", "must lie in (0, 1] for exponential decay"));
                }
                if !(0.0..1.0).contains(&hold_fraction) {
                    return Err(Error::config("train.lr_hold_fraction", "must lie in [0, 1)"));
                }
            }
        }
        Ok(())
    }

    fn adam(&self, factor: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate * factor,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Metrics after one epoch. Losses are in normalized output space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean of the minibatch losses seen during the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_r2: f64,
    pub val_rmse_mm: f64,
    pub learning_rate: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn train_loss(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn val_loss(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }

    pub fn val_r2(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_r2).collect()
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CalibModel,
    pub history: TrainHistory,
    /// Indices into the dataset's trial list.
    pub train_trials: Vec<usize>,
    pub validation_trials: Vec<usize>,
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(dataset, config, |_| {})
}

/// Trains with a callback after every epoch. Deterministic per seed and
/// dataset: the split, the initial weights and the minibatch order all derive
/// from `config.seed`.
pub fn train_with_progress(
    dataset: &Dataset,
    config: &TrainConfig,
    progress: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    let (train_trials, validation_trials) = dataset.split_trials(config.validation_fraction, config.seed)?;
    let train_set = dataset.subset(&train_trials);
    let val_set = dataset.subset(&validation_trials);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training or validation split has no samples"));
    }

    let features: Vec<[f64; FEATURES]> = train_set.samples.iter().map(|s| s.features).collect();
    let targets: Vec<[f64; OUTPUTS]> = train_set.samples.iter().map(|s| [s.target.x, s.target.y]).collect();
    let mut model = CalibModel::new(config.architecture, config.seed);
    model.input_norm = Normalizer::fit(&features)?;
    model.output_norm = Normalizer::fit(&targets)?;

    let history = match config.precision {
        Precision::Single => optimize::<f32>(&mut model, &train_set.samples, &val_set.samples, config, progress)?,
        Precision::Double => optimize::<f64>(&mut model, &train_set.samples, &val_set.samples, config, progress)?,
    };
    Ok(TrainOutcome {
        model,
        history,
        train_trials,
        validation_trials,
    })
}

/// Normalized row-major features and targets.
fn normalized<T: Real>(model: &CalibModel, samples: &[Sample]) -> (Vec<T>, Vec<T>) {
    let mut x = Vec::with_capacity(samples.len() * FEATURES);
    let mut y = Vec::with_capacity(samples.len() * OUTPUTS);
    for s in samples {
        x.extend(model.input_norm.apply(&s.features).into_iter().map(T::of));
        y.extend(model.output_norm.apply(&[s.target.x, s.target.y]).into_iter().map(T::of));
    }
    (x, y)
}

const EVAL_CHUNK: usize = 512;

fn optimize<T: Real>(
    model: &mut CalibModel,
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainHistory> {
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok(history);
    }
    let mut net: Network<T> = model.network.map(|v| T::of(v));
    let (x, y) = normalized::<T>(model, train);
    let (val_x, _) = normalized::<T>(model, val);
    let val_targets: Vec<Point2> = val.iter().map(|s| s.target).collect();

    let arch = model.architecture();
    let mut grads = Network::<T>::zeros(FEATURES, arch.hidden, arch.blocks, OUTPUTS);
    let mut adam = AdamState::<T>::new();
    let mut ws = Workspace::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let n = train.len();
    let batch = config.batch_size.min(n);
    let steps_per_epoch = n.div_ceil(batch);
    let total_steps = steps_per_epoch * config.epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let (mut bx, mut by) = (Vec::with_capacity(batch * FEATURES), Vec::with_capacity(batch * OUTPUTS));
    let mut step = 0;

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = config.learning_rate;
        for chunk in order.chunks(batch) {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.extend_from_slice(&x[i * FEATURES..(i + 1) * FEATURES]);
                by.extend_from_slice(&y[i * OUTPUTS..(i + 1) * OUTPUTS]);
            }
            let loss = batch_loss_and_grads(&net, &bx, &by, chunk.len(), &mut ws, &mut grads);
            if !loss.is_finite() {
                return Err(Error::Degenerate(format!(
                    "training diverged at epoch {epoch} (loss {loss})"
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            let factor = config.schedule.factor(step, total_steps);
            lr = config.learning_rate * factor;
            adam_step(&mut net.params_mut(), &grads.params(), &mut adam, &config.adam(factor))?;
            step += 1;
        }

        let mut val_pred = Vec::with_capacity(val.len());
        let mut val_loss = 0.0;
        for (c, xs) in val_x.chunks(EVAL_CHUNK * FEATURES).enumerate() {
            let rows = xs.len() / FEATURES;
            let z = net.forward(xs, rows);
            for (r, o) in z.chunks_exact(OUTPUTS).enumerate() {
                let target = val_targets[c * EVAL_CHUNK + r];
                let zt = model.output_norm.apply(&[target.x, target.y]);
                let (o0, o1) = (o[0].as_f64(), o[1].as_f64());
                val_loss += (o0 - zt[0]).powi(2) + (o1 - zt[1]).powi(2);
                let p = model.output_norm.invert(&[o0, o1]);
                val_pred.push(Point2::new(p[0], p[1]));
            }
        }
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / n as f64,
            val_loss: val_loss / (OUTPUTS * val.len()) as f64,
            val_r2: r_squared(&val_pred, &val_targets)?,
            val_rmse_mm: rmse(&val_pred, &val_targets)?,
            learning_rate: lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        progress(&stats);
        history.epochs.push(stats);
    }
    model.network = net.map(|v| v.as_f64());
    Ok(history)
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_r2,val_rmse_mm";

/// Writes the per-epoch history as CSV. Timing is left out so the file is
/// reproducible.
pub fn write_history_csv<W: Write>(history: &TrainHistory, mut writer: W) -> Result<()> {
    writeln!(writer, "{HISTORY_HEADER}")?;
    for e in &history.epochs {
        writeln!(
            writer,
            "{},{:e},{:e},{},{}",
            e.epoch, e.train_loss, e.val_loss, e.val_r2, e.val_rmse_mm
        )?;
    }
    Ok(())
}

pub fn save_history_csv(history: &TrainHistory, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_history_csv(history, file)
}
