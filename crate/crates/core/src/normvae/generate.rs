use rand::Rng;
use rand_distr::StandardNormal;

use super::latent::{GMap, LatentCode};
use super::model::{decode_batch, VaeParams};
use crate::error::{Error, Result};
use crate::nnkit::{norm, Matrix};

/// Spacing between scheduled norms, in units of √N.
pub const BETA_STEP: f64 = 0.75;

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRequest {
    pub semantic: Vec<f64>,
    pub count: usize,
    /// Latent norms; output `i` uses `beta_schedule[i % len]`.
    pub beta_schedule: Vec<f64>,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("generation count must be at least 1".into()));
        }
        if self.beta_schedule.is_empty() {
            return Err(Error::Config("beta schedule is empty".into()));
        }
        if let Some(b) = self
            .beta_schedule
            .iter()
            .find(|b| !(**b > 0.0 && b.is_finite()))
        {
            return Err(Error::Config(format!(
                "beta values must be positive, got {b}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedFeature {
    pub feature: Vec<f64>,
    /// Norm of the latent code that was decoded.
    pub beta: f64,
}

/// Norm levels from `g(1)` up to `g(0.5)` in steps of 0.75·√N, cycled to
/// length `k`. For the default map: {1, 1.75, 2.5, 3.25, 4, 4.75}·√N.
pub fn default_beta_schedule(gmap: &GMap, k: usize) -> Vec<f64> {
    let lo_mult = gmap.multiplier(1.0).min(gmap.multiplier(0.5));
    let hi_mult = gmap.multiplier(1.0).max(gmap.multiplier(0.5));
    let mut levels = Vec::new();
    let mut i = 0u32;
    loop {
        let m = lo_mult + BETA_STEP * f64::from(i);
        if m > hi_mult + 1e-9 {
            break;
        }
        levels.push(m * gmap.sqrt_dim());
        i += 1;
    }
    levels.iter().copied().cycle().take(k).collect()
}

fn unit_direction<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let len = norm(&z);
        if len > 1e-12 {
            return z.into_iter().map(|v| v / len).collect();
        }
    }
}

fn decode_all(
    params: &VaeParams,
    latents: Vec<f64>,
    semantic: &[f64],
    betas: Vec<f64>,
) -> Result<Vec<GeneratedFeature>> {
    let k = betas.len();
    if semantic.len() != params.semantic_dim() {
        return Err(Error::shape(
            "generation semantic",
            params.semantic_dim(),
            semantic.len(),
        ));
    }
    let z = Matrix::new(k, params.latent_dim(), latents)?;
    let a = Matrix::new(k, semantic.len(), semantic.repeat(k))?;
    let out = decode_batch(params, &z, &a)?;
    Ok(betas
        .into_iter()
        .enumerate()
        .map(|(i, beta)| GeneratedFeature {
            feature: out.row(i).to_vec(),
            beta,
        })
        .collect())
}

/// The latent codes [`generate`] decodes: random unit directions scaled to
/// the scheduled norms.
pub fn scheduled_latents<R: Rng + ?Sized>(
    latent_dim: usize,
    req: &GenerationRequest,
    rng: &mut R,
) -> Result<Vec<LatentCode>> {
    req.validate()?;
    Ok((0..req.count)
        .map(|i| {
            let beta = req.beta_schedule[i % req.beta_schedule.len()];
            LatentCode::new(
                unit_direction(latent_dim, rng)
                    .into_iter()
                    .map(|v| v * beta)
                    .collect(),
            )
        })
        .collect())
}

/// Decodes `count` random directions, each scaled to its scheduled norm.
pub fn generate<R: Rng + ?Sized>(
    params: &VaeParams,
    req: &GenerationRequest,
    rng: &mut R,
) -> Result<Vec<GeneratedFeature>> {
    let codes = scheduled_latents(params.latent_dim(), req, rng)?;
    let betas = (0..req.count)
        .map(|i| req.beta_schedule[i % req.beta_schedule.len()])
        .collect();
    let latents = codes.into_iter().flat_map(|c| c.z).collect();
    decode_all(params, latents, &req.semantic, betas)
}

/// Standard VAE sampling, `z ~ N(0, I)` decoded as is; each output is tagged
/// with `‖z‖`.
pub fn generate_from_prior<R: Rng + ?Sized>(
    params: &VaeParams,
    semantic: &[f64],
    count: usize,
    rng: &mut R,
) -> Result<Vec<GeneratedFeature>> {
    if count == 0 {
        return Err(Error::Config("generation count must be at least 1".into()));
    }
    let n = params.latent_dim();
    let mut latents = Vec::with_capacity(count * n);
    let mut betas = Vec::with_capacity(count);
    for _ in 0..count {
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        betas.push(norm(&z));
        latents.extend(z);
    }
    decode_all(params, latents, semantic, betas)
}
