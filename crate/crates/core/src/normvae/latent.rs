use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnkit::{dot, norm};

/// Latent codes at or below this norm cannot be rescaled.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Linear map from crop IoU to target latent norm, `g(s) = w·s + b`.
///
/// The coefficients are kept in units of √N (`w = slope·√N`,
/// `b = intercept·√N`) so that integer endpoint multiples such as
/// `g(1) = √N` and `g(0.5) = 5√N` come out exact for every N.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GMap {
    pub slope: f64,
    pub intercept: f64,
    pub latent_dim: usize,
}

impl GMap {
    /// `g(1) = at_full·√N` and `g(0.5) = at_half·√N`.
    pub fn from_range(latent_dim: usize, at_full: f64, at_half: f64) -> Self {
        Self {
            slope: 2.0 * (at_full - at_half),
            intercept: 2.0 * at_half - at_full,
            latent_dim,
        }
    }

    /// `g(1) = √N`, `g(0.5) = 5√N`, i.e. `w = −8√N`, `b = 9√N`.
    pub fn default_for(latent_dim: usize) -> Self {
        Self::from_range(latent_dim, 1.0, 5.0)
    }

    pub fn sqrt_dim(&self) -> f64 {
        (self.latent_dim as f64).sqrt()
    }

    pub fn w(&self) -> f64 {
        self.slope * self.sqrt_dim()
    }

    pub fn b(&self) -> f64 {
        self.intercept * self.sqrt_dim()
    }

    /// `g(s)/√N`.
    pub fn multiplier(&self, iou: f64) -> f64 {
        self.slope * iou + self.intercept
    }

    pub fn eval(&self, iou: f64) -> Result<f64> {
        g_map(self, iou)
    }

    /// IoU whose target norm is `norm`; not clamped to [0.5, 1].
    pub fn inverse(&self, norm: f64) -> f64 {
        (norm / self.sqrt_dim() - self.intercept) / self.slope
    }
}

pub fn g_map(gmap: &GMap, iou: f64) -> Result<f64> {
    if !(0.5..=1.0).contains(&iou) {
        return Err(Error::IouDomain(iou));
    }
    Ok(gmap.multiplier(iou) * gmap.sqrt_dim())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub z: Vec<f64>,
    /// Set when `z` was rescaled to the norm of this IoU.
    pub source_iou: Option<f64>,
}

impl LatentCode {
    pub fn new(z: Vec<f64>) -> Self {
        Self {
            z,
            source_iou: None,
        }
    }

    pub fn norm(&self) -> f64 {
        norm(&self.z)
    }
}

fn checked_norm(z: &[f64]) -> Result<f64> {
    let n = norm(z);
    if !n.is_finite() || n <= DEGENERATE_NORM {
        return Err(Error::DegenerateLatent {
            norm: n,
            eps: DEGENERATE_NORM,
        });
    }
    Ok(n)
}

/// `z / ‖z‖ · g(iou)`: keeps the direction, replaces the length.
pub fn rescale_latent(z: &[f64], iou: f64, gmap: &GMap) -> Result<LatentCode> {
    let target = g_map(gmap, iou)?;
    let n = checked_norm(z)?;
    Ok(LatentCode {
        z: z.iter().map(|v| v / n * target).collect(),
        source_iou: Some(iou),
    })
}

/// Vector-Jacobian product of [`rescale_latent`]:
/// `g(s)/‖z‖ · (u − ẑ(ẑ·u))` with `ẑ = z/‖z‖`.
pub fn rescale_backward(z: &[f64], iou: f64, gmap: &GMap, upstream: &[f64]) -> Result<Vec<f64>> {
    let target = g_map(gmap, iou)?;
    let n = checked_norm(z)?;
    let radial = dot(z, upstream) / (n * n);
    let k = target / n;
    Ok(z.iter()
        .zip(upstream)
        .map(|(zi, ui)| k * (ui - zi * radial))
        .collect())
}

/// Posterior parameters for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub mu: Vec<f64>,
    /// Clamped to [−10, 10].
    pub log_var: Vec<f64>,
}

pub const LOG_VAR_CLAMP: f64 = 10.0;

/// `z = mu + exp(½·log_var) ⊙ eps`.
pub fn reparameterize(out: &EncoderOutput, eps: &[f64]) -> LatentCode {
    LatentCode::new(
        out.mu
            .iter()
            .zip(&out.log_var)
            .zip(eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect(),
    )
}

/// Gradients of a scalar objective with respect to `(mu, log_var)` given
/// d objective / d z.
pub fn reparameterize_backward(
    out: &EncoderOutput,
    eps: &[f64],
    upstream: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let grad_mu = upstream.to_vec();
    let grad_lv = out
        .log_var
        .iter()
        .zip(eps)
        .zip(upstream)
        .map(|((lv, e), u)| 0.5 * (0.5 * lv).exp() * e * u)
        .collect();
    (grad_mu, grad_lv)
}

/// `½ Σ (exp(lv) + mu² − 1 − lv)`, evaluated as `expm1(lv) − lv` so each
/// term stays non-negative in floating point.
pub fn kl_divergence(mu: &[f64], log_var: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| (lv.exp_m1() - lv).max(0.0) + m * m)
        .sum::<f64>()
}
