use super::layers::sigmoid;
use super::tensor::Tensor;
use super::NnError;

/// Probability clamp used by the cross-entropy loss.
pub const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy with predictions clamped to `[ε, 1−ε]`.
pub fn bce_loss(pred: &Tensor, target: &Tensor) -> Result<f64, NnError> {
    target.expect_shape(pred.shape(), "bce target")?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Loss and gradient with respect to the logits `a`, where the predictions
/// are `clamp(sigmoid(a), ε, 1−ε)`. Inside the clamp the gradient is
/// `(p − y)/N`; where the clamp is active it is zero.
pub fn bce_grad_from_logits(logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(target)
        .map(|(&a, &y)| {
            let raw = sigmoid(a);
            let p = raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
            loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            if raw == p {
                (p - y) / n
            } else {
                0.0
            }
        })
        .collect();
    (loss / n, grad)
}

/// KL divergence of `N(mu, exp(logvar))` from the standard normal.
pub fn kl_diag_gaussian(mu: &Tensor, logvar: &Tensor) -> Result<f64, NnError> {
    logvar.expect_shape(mu.shape(), "kl logvar")?;
    Ok(-0.5 * mu.data().iter().zip(logvar.data()).map(|(m, lv)| 1.0 + lv - m * m - lv.exp()).sum::<f64>())
}

/// Gradients of [`kl_diag_gaussian`] with respect to `mu` and `logvar`.
pub fn kl_grad(mu: &[f64], logvar: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (mu.to_vec(), logvar.iter().map(|lv| -0.5 * (1.0 - lv.exp())).collect())
}
