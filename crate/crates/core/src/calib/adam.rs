use crate::error::{Error, Result};

use super::linalg::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState<T> {
    pub step: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }
}

/// One bias-corrected Adam update of every parameter group.
///
/// Uses the folded form `p -= lr_t * m / (sqrt(v) + eps_t)` with
/// `lr_t = lr * sqrt(1 - β2^t) / (1 - β1^t)` and `eps_t = eps * sqrt(1 - β2^t)`,
/// which equals `lr * m̂ / (sqrt(v̂) + eps)` exactly in real arithmetic.
pub fn adam_step<T: Real>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::invalid(format!(
            "{} parameter groups but {} gradient groups",
            params.len(),
            grads.len()
        )));
    }
    if let Some(i) = params.iter().zip(grads).position(|(p, g)| p.len() != g.len()) {
        return Err(Error::invalid(format!(
            "group {i}: {} parameters but {} gradients",
            params[i].len(),
            grads[i].len()
        )));
    }
    if state.first_moment.is_empty() {
        state.first_moment = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        state.second_moment = state.first_moment.clone();
    } else if state.first_moment.len() != params.len()
        || state.first_moment.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
    {
        return Err(Error::invalid("optimizer state does not match the parameter shapes"));
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = (1.0 - config.beta2.powi(t)).sqrt();
    let step_size = T::of(config.learning_rate * c2 / c1);
    let eps = T::of(config.epsilon * c2);
    let (b1, b2) = (T::of(config.beta1), T::of(config.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - config.beta1), T::of(1.0 - config.beta2));

    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            *p = *p - step_size * *m / (v.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_scalar(w: &mut f64, g: f64, state: &mut AdamState<f64>, cfg: &AdamConfig) {
        let mut p = [*w];
        adam_step(&mut [&mut p[..]], &[&[g][..]], state, cfg).unwrap();
        *w = p[0];
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new();
        let mut w = 1.0;
        let g = 2.0 * w;
        step_scalar(&mut w, g, &mut state, &cfg);
        // m̂ = g, v̂ = g²: the first step is lr * g / (|g| + eps)
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((w - expected).abs() < 1e-15, "{w}");
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::new();
        let mut w = 0.5;
        step_scalar(&mut w, 1.0, &mut state, &cfg);
        let after_one = w;
        let (m, v) = (state.first_moment[0][0], state.second_moment[0][0]);
        let mut zero_state = AdamState::new();
        let mut z = 0.5;
        step_scalar(&mut z, 0.0, &mut zero_state, &cfg);
        assert_eq!(z, 0.5);
        // moments decay geometrically under zero gradient
        let mut p = [after_one];
        adam_step(&mut [&mut p[..]], &[&[0.0][..]], &mut state, &cfg).unwrap();
        assert!((state.first_moment[0][0] - 0.9 * m).abs() < 1e-18);
        assert!((state.second_moment[0][0] - 0.999 * v).abs() < 1e-18);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new();
        let mut w = 0.0;
        for _ in 0..200 {
            let g = 2.0 * (w - 3.0);
            step_scalar(&mut w, g, &mut state, &cfg);
        }
        assert!((w - 3.0).abs() < 0.1, "{w}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::<f64>::new();
        let mut p = [0.0, 1.0];
        assert!(adam_step(&mut [&mut p[..]], &[&[0.0][..]], &mut state, &cfg).is_err());
        assert!(adam_step(&mut [&mut p[..]], &[], &mut state, &cfg).is_err());
        adam_step(&mut [&mut p[..]], &[&[0.0, 0.0][..]], &mut state, &cfg).unwrap();
        let mut q = [0.0; 3];
        assert!(adam_step(&mut [&mut q[..]], &[&[0.0; 3][..]], &mut state, &cfg).is_err());
    }

    #[test]
    fn folded_form_matches_textbook_update() {
        let cfg = AdamConfig::default();
        let grads = [0.3, -1.2, 0.05, 2.0, -0.7];
        let mut state = AdamState::new();
        let mut w = [0.1];
        let (mut m, mut v, mut reference) = (0.0f64, 0.0f64, 0.1f64);
        for (t, &g) in grads.iter().enumerate() {
            adam_step(&mut [&mut w[..]], &[&[g][..]], &mut state, &cfg).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            reference -= 1e-3 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((w[0] - reference).abs() < 1e-12);
    }
}
