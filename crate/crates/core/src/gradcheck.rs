//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};

/// Largest relative disagreement between the analytic gradient returned by
/// `eval` at `params` and central differences with step `eps`.
///
/// `eval` maps a parameter vector to `(loss, gradient)`; only the gradient
/// at the unperturbed point is used. The relative error of one coordinate is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn grad_check<F>(params: &[f64], eps: f64, mut eval: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::Precondition(format!("perturbation {eps} outside (0, 1e-3]")));
    }
    let (base, analytic) = eval(params)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {base} at the base point")));
    }
    if analytic.len() != params.len() {
        return Err(Error::Dimension(format!(
            "{} gradient entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut point = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        point[i] = params[i] + eps;
        let (plus, _) = eval(&point)?;
        point[i] = params[i] - eps;
        let (minus, _) = eval(&point)?;
        point[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss while perturbing coordinate {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-12);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    Ok(worst)
}
