use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::model::{vae_loss, LossSample, VaeParams};
use crate::error::{Error, Result};
use crate::nnkit::AdamState;
use crate::synthworld::CropSample;

/// Per-epoch means over mini-batches.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub epoch_kl: Vec<f64>,
    pub epoch_recon: Vec<f64>,
    /// Smallest batch KL seen during each epoch.
    pub epoch_min_kl: Vec<f64>,
}

/// Shuffled mini-batch Adam on `(feature, class semantic, iou)` triples.
/// Deterministic for a given seed.
pub fn train(
    mut params: VaeParams,
    samples: &[CropSample],
    semantics: &BTreeMap<u32, Vec<f64>>,
    seed: u64,
) -> Result<(VaeParams, TrainReport)> {
    let cfg = params.config.clone();
    cfg.validate()?;
    let mode = cfg.mode;
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return Ok((params, report));
    }
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let lookup: Vec<&[f64]> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            semantics
                .get(&s.class_id)
                .map(Vec::as_slice)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "sample {i}: no semantic vector for class {}",
                        s.class_id
                    ))
                })
        })
        .collect::<Result<_>>()?;

    let n = params.latent_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::new(cfg.adam, &[&params.encoder, &params.decoder]);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut eps = vec![0.0; cfg.batch_size * n];
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut kl_sum, mut recon_sum, mut min_kl) = (0.0, 0.0, 0.0, f64::INFINITY);
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            eps.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
            let batch: Vec<LossSample<'_>> = chunk
                .iter()
                .enumerate()
                .map(|(j, &i)| LossSample {
                    feature: &samples[i].feature,
                    semantic: lookup[i],
                    iou: samples[i].iou,
                    eps: &eps[j * n..(j + 1) * n],
                })
                .collect();
            let out = vae_loss(&params, &batch, mode).map_err(|e| match e {
                Error::NonFiniteLoss { value, context } => Error::NonFiniteLoss {
                    value,
                    context: format!("epoch {epoch} batch {b}: {context}"),
                },
                other => other,
            })?;
            let VaeParams {
                encoder, decoder, ..
            } = &mut params;
            adam.step(
                &mut [encoder, decoder],
                &[&out.grads.encoder, &out.grads.decoder],
            )?;
            loss_sum += out.loss;
            kl_sum += out.kl;
            recon_sum += out.recon;
            min_kl = min_kl.min(out.kl);
            batches += 1;
        }
        let denom = batches as f64;
        report.epoch_loss.push(loss_sum / denom);
        report.epoch_kl.push(kl_sum / denom);
        report.epoch_recon.push(recon_sum / denom);
        report.epoch_min_kl.push(min_kl);
    }
    Ok((params, report))
}
