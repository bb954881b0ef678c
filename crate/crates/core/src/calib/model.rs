use crate::error::{Error, Result};
use crate::geom::Point2;

use super::linalg::Real;
use super::network::{Network, Workspace};

/// Network inputs: `[R_L, R_R, E_L, E_R]`.
pub const FEATURES: usize = 4;
/// Network outputs: marker `(x, y)`.
pub const OUTPUTS: usize = 2;

/// Width and depth of the residual trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub hidden: usize,
    pub blocks: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: 1024,
            blocks: 2,
        }
    }
}

/// Per-column standardization `(v - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits mean and population standard deviation per column. A constant
    /// column gets unit scale.
    pub fn fit<const D: usize>(rows: &[[f64; D]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("cannot fit normalization on no rows"));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; D];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; D];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 * m.abs().max(1.0) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn invert(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((z, m), s)| z * s + m)
            .collect()
    }

    pub(crate) fn is_valid(&self) -> bool {
        self.mean.len() == self.std.len()
            && self.mean.iter().all(|m| m.is_finite())
            && self.std.iter().all(|s| s.is_finite() && *s > 0.0)
    }
}

/// Trained (or freshly initialized) calibration regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibModel {
    pub network: Network<f64>,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
}

/// He-initialized model of the default architecture with identity
/// normalization. Deterministic per seed.
pub fn init_model(seed: u64) -> CalibModel {
    CalibModel::new(Architecture::default(), seed)
}

impl CalibModel {
    pub fn new(arch: Architecture, seed: u64) -> Self {
        Self {
            network: Network::he(FEATURES, arch.hidden, arch.blocks, OUTPUTS, seed),
            input_norm: Normalizer::identity(FEATURES),
            output_norm: Normalizer::identity(OUTPUTS),
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            hidden: self.network.hidden(),
            blocks: self.network.blocks.len(),
        }
    }

    fn normalized_inputs(&self, features: &[[f64; FEATURES]]) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(features.len() * FEATURES);
        for (i, f) in features.iter().enumerate() {
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("feature row {i} is not finite: {f:?}")));
            }
            x.extend(self.input_norm.apply(f));
        }
        Ok(x)
    }

    /// Predicted marker position for one reading, mm.
    pub fn forward(&self, features: [f64; FEATURES]) -> Result<Point2> {
        let x = self.normalized_inputs(&[features])?;
        let z = self.output_norm.invert(&self.network.forward_single(&x));
        Ok(Point2::new(z[0], z[1]))
    }

    pub fn predict_batch(&self, features: &[[f64; FEATURES]]) -> Result<Vec<Point2>> {
        let x = self.normalized_inputs(features)?;
        let z = self.network.forward(&x, features.len());
        Ok(z.chunks_exact(OUTPUTS)
            .map(|o| {
                let v = self.output_norm.invert(o);
                Point2::new(v[0], v[1])
            })
            .collect())
    }

    /// Mean squared error in normalized output space over the batch and both
    /// outputs, and its gradient with respect to every parameter.
    pub fn loss_and_gradients(
        &self,
        features: &[[f64; FEATURES]],
        targets: &[Point2],
    ) -> Result<(f64, Network<f64>)> {
        if features.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if features.len() != targets.len() {
            return Err(Error::invalid(format!(
                "{} feature rows for {} targets",
                features.len(),
                targets.len()
            )));
        }
        let x = self.normalized_inputs(features)?;
        let y: Vec<f64> = targets
            .iter()
            .flat_map(|t| self.output_norm.apply(&[t.x, t.y]))
            .collect();
        let mut ws = Workspace::default();
        let mut grads = Network::zeros(FEATURES, self.network.hidden(), self.network.blocks.len(), OUTPUTS);
        let loss = batch_loss_and_grads(&self.network, &x, &y, features.len(), &mut ws, &mut grads);
        Ok((loss, grads))
    }

    /// Loss only, same definition as [`CalibModel::loss_and_gradients`].
    pub fn loss(&self, features: &[[f64; FEATURES]], targets: &[Point2]) -> Result<f64> {
        let x = self.normalized_inputs(features)?;
        let z = self.network.forward(&x, features.len());
        let mut sum = 0.0;
        for (o, t) in z.chunks_exact(OUTPUTS).zip(targets) {
            let y = self.output_norm.apply(&[t.x, t.y]);
            sum += (o[0] - y[0]).powi(2) + (o[1] - y[1]).powi(2);
        }
        Ok(sum / (OUTPUTS * features.len()) as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.network.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
            && self.input_norm.is_valid()
            && self.output_norm.is_valid()
    }
}

/// Single-precision copy of a [`CalibModel`] for low-latency
/// single-sample inference. Halving the weight bytes halves the memory
/// traffic of a forward pass, which dominates its cost. Models trained in
/// single precision convert exactly.
#[derive(Debug, Clone)]
pub struct Predictor {
    network: Network<f32>,
    input_norm: Normalizer,
    output_norm: Normalizer,
}

impl Predictor {
    pub fn new(model: &CalibModel) -> Self {
        Self {
            network: model.network.map(|v| v as f32),
            input_norm: model.input_norm.clone(),
            output_norm: model.output_norm.clone(),
        }
    }

    /// Predicted marker position for one reading, mm.
    pub fn forward(&self, features: [f64; FEATURES]) -> Result<Point2> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("feature row is not finite: {features:?}")));
        }
        let x: Vec<f32> = self.input_norm.apply(&features).into_iter().map(|v| v as f32).collect();
        let z: Vec<f64> = self.network.forward_single(&x).into_iter().map(f64::from).collect();
        let v = self.output_norm.invert(&z);
        Ok(Point2::new(v[0], v[1]))
    }
}

/// Forward + backward on a normalized batch; returns the batch loss.
pub(crate) fn batch_loss_and_grads<T: Real>(
    net: &Network<T>,
    x: &[T],
    y: &[T],
    batch: usize,
    ws: &mut Workspace<T>,
    grads: &mut Network<T>,
) -> f64 {
    net.forward_cached(x, batch, ws);
    let scale = T::one() / T::of(batch as f64);
    let mut sum = 0.0f64;
    let d_out: Vec<T> = ws
        .output()
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            let r = p - t;
            sum += r.as_f64() * r.as_f64();
            r * scale
        })
        .collect();
    net.backward(ws, &d_out, grads);
    sum / (OUTPUTS * batch) as f64
}
