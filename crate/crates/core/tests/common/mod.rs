#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfs_shape::calib::{Architecture, CalibModel, Normalizer, FEATURES};
use rfs_shape::Point2;

/// Model with random normalizers and a random batch drawn around them.
///
/// Biases are randomized too: with the zero biases of a fresh model, an
/// input whose block activations are all dead puts a ReLU exactly on its
/// kink, where the loss has no derivative to compare against.
pub fn fixture(arch: Architecture, seed: u64, batch: usize) -> (CalibModel, Vec<[f64; FEATURES]>, Vec<Point2>) {
    let mut model = CalibModel::new(arch, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let names = model.network.param_names();
    for (name, tensor) in names.iter().zip(model.network.params_mut()) {
        if name.ends_with("bias") {
            tensor.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    }
    model.input_norm = Normalizer {
        mean: (0..FEATURES).map(|_| rng.random_range(-50.0..50.0)).collect(),
        std: (0..FEATURES).map(|_| rng.random_range(0.5..20.0)).collect(),
    };
    model.output_norm = Normalizer {
        mean: vec![rng.random_range(0.0..60.0), rng.random_range(-30.0..30.0)],
        std: vec![rng.random_range(5.0..30.0), rng.random_range(5.0..30.0)],
    };
    let features = (0..batch)
        .map(|_| std::array::from_fn(|i| model.input_norm.mean[i] + model.input_norm.std[i] * rng.random_range(-2.0..2.0)))
        .collect();
    let targets = (0..batch)
        .map(|_| Point2::new(rng.random_range(0.0..100.0), rng.random_range(-60.0..60.0)))
        .collect();
    (model, features, targets)
}

/// Central-difference derivative of the loss with respect to one parameter.
///
/// On a smooth stretch the estimates at `h` and `h / 10` agree to O(h²). When
/// they do not, a ReLU switches inside `[x - h, x + h]` and the step is
/// shrunk tenfold, at most twice. The agreement test allows for rounding
/// noise in the loss, which grows as the step shrinks.
pub fn numeric_partial(
    model: &CalibModel,
    tensor: usize,
    index: usize,
    h: f64,
    features: &[[f64; FEATURES]],
    targets: &[Point2],
) -> f64 {
    let mut m = model.clone();
    let x = model.network.params()[tensor][index];
    let mut at = |v: f64| {
        m.network.params_mut()[tensor][index] = v;
        m.loss(features, targets).unwrap()
    };
    let up = at(x + h);
    let mut coarse = (up - at(x - h)) / (2.0 * h);
    let mut central = |h: f64| (at(x + h) - at(x - h)) / (2.0 * h);
    let mut h = h;
    for _ in 0..2 {
        let fine = central(h / 10.0);
        let noise = 1e-15 * up.abs() / (h / 10.0);
        if (coarse - fine).abs() <= 1e-5 * coarse.abs().max(fine.abs()) + noise {
            return coarse;
        }
        h /= 10.0;
        coarse = fine;
    }
    coarse
}

/// Relative error with an absolute floor for vanishing gradients.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}
