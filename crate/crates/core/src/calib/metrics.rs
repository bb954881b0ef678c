use crate::error::{Error, Result};
use crate::geom::Point2;

fn check_lengths(predictions: &[Point2], targets: &[Point2]) -> Result<()> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::invalid(format!(
            "need equal nonzero lengths, got {} predictions and {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    Ok(())
}

/// Coefficient of determination `1 - SS_res / SS_tot`, pooled over x and y.
/// Each coordinate is centered on its own mean.
pub fn r_squared(predictions: &[Point2], targets: &[Point2]) -> Result<f64> {
    check_lengths(predictions, targets)?;
    let n = targets.len() as f64;
    let mean = targets.iter().fold(Point2::ORIGIN, |a, &t| a + t) * (1.0 / n);
    let ss_tot: f64 = targets.iter().map(|&t| (t - mean).dot(t - mean)).sum();
    if !(ss_tot > 0.0) {
        return Err(Error::UndefinedMetric(
            "targets have zero variance, R² is undefined".into(),
        ));
    }
    let ss_res: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &t)| (p - t).dot(p - t))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean over samples and both coordinates of the squared error.
pub fn mean_squared_error(predictions: &[Point2], targets: &[Point2]) -> Result<f64> {
    check_lengths(predictions, targets)?;
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &t)| (p - t).dot(p - t))
        .sum();
    Ok(sum / (2 * targets.len()) as f64)
}

/// Root of [`mean_squared_error`], in the units of the inputs.
pub fn rmse(predictions: &[Point2], targets: &[Point2]) -> Result<f64> {
    mean_squared_error(predictions, targets).map(f64::sqrt)
}
