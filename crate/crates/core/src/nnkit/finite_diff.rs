use super::mlp::FlatParams;
use crate::error::{Error, Result};

/// Central-difference gradient of `loss` at `params`, one scalar at a time.
pub fn finite_diff_grad<P, F>(mut loss: F, params: &P, h: f64) -> Result<P>
where
    P: FlatParams + Clone,
    F: FnMut(&P) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let base = loss(params);
    if !base.is_finite() {
        return Err(Error::NonFiniteLoss {
            value: base,
            context: "evaluating the unperturbed point".into(),
        });
    }
    let mut probe = params.clone();
    let mut grad = params.clone();
    for i in 0..params.num_scalars() {
        let orig = params.scalar(i);
        probe.set_scalar(i, orig + h);
        let up = loss(&probe);
        probe.set_scalar(i, orig - h);
        let down = loss(&probe);
        probe.set_scalar(i, orig);
        for v in [up, down] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss {
                    value: v,
                    context: format!("probing scalar {i}"),
                });
            }
        }
        grad.set_scalar(i, (up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// `|a − n| / max(1e-8, |a| + |n|)`.
#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

pub fn max_relative_error<P: FlatParams>(analytic: &P, numeric: &P) -> f64 {
    assert_eq!(analytic.num_scalars(), numeric.num_scalars());
    (0..analytic.num_scalars())
        .map(|i| relative_error(analytic.scalar(i), numeric.scalar(i)))
        .fold(0.0, f64::max)
}
