use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function at `x`.
pub fn finite_difference_grad<F>(mut f: F, x: &Tensor<f64>, eps: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "finite difference step must be positive, got {eps}"
        )));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_difference_grad",
            });
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Tensor::new(x.shape(), grad)
}

/// Largest elementwise relative error between two gradients.
///
/// The denominator is `max(|a|, |b|, 1e-3 * scale, 1e-12)` where `scale` is
/// the larger infinity norm of the two; entries that are zero in exact
/// arithmetic are then judged against the gradient's overall magnitude.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient lengths differ");
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .map(|(&p, &q)| (p - q).abs() / p.abs().max(q.abs()).max(1e-3 * scale).max(1e-12))
        .fold(0.0, f64::max)
}
