use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::latent::{
    g_map, kl_divergence, rescale_backward, rescale_latent, EncoderOutput, GMap, LatentCode,
    LOG_VAR_CLAMP,
};
use crate::error::{Error, Result};
use crate::nnkit::{
    mlp_backward, mlp_forward, Activation, AdamConfig, FlatParams, Matrix, MlpSpec, ParamStore,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Plain conditional VAE.
    Vanilla,
    /// Latent rescaled to `g(iou)` before decoding.
    Norm,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::Norm => "norm",
        }
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            Mode::Vanilla => 0,
            Mode::Norm => 1,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Mode::Vanilla),
            1 => Some(Mode::Norm),
            _ => None,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Mode::Vanilla),
            "norm" => Ok(Mode::Norm),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected vanilla or norm)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub semantic_dim: usize,
    /// Encoder hidden widths; the encoder has one more dense layer than this.
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub leaky_slope: f64,
    /// Target latent norms at IoU 1 and IoU 0.5, in units of √N.
    pub norm_range: [f64; 2],
    /// KL weight λ.
    pub kl_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub mode: Mode,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            latent_dim: 16,
            semantic_dim: 16,
            encoder_hidden: vec![128, 128],
            decoder_hidden: vec![128],
            leaky_slope: 0.2,
            norm_range: [1.0, 5.0],
            kl_weight: 1.0,
            epochs: 100,
            batch_size: 64,
            adam: AdamConfig::default(),
            mode: Mode::Norm,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.latent_dim == 0 || self.semantic_dim == 0 {
            return Err(Error::Config("VAE dimensions must be positive".into()));
        }
        if self.encoder_hidden.contains(&0) || self.decoder_hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(self.kl_weight > 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::Config(format!(
                "kl_weight must be positive, got {}",
                self.kl_weight
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.norm_range.iter().all(|v| *v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!(
                "norm_range must be positive, got {:?}",
                self.norm_range
            )));
        }
        if self.adam.lr.is_nan() || self.adam.lr <= 0.0 {
            return Err(Error::Config("adam.lr must be positive".into()));
        }
        Ok(())
    }

    pub fn gmap(&self) -> GMap {
        GMap::from_range(self.latent_dim, self.norm_range[0], self.norm_range[1])
    }

    pub fn encoder_spec(&self) -> Result<MlpSpec> {
        let mut dims = vec![self.feature_dim + self.semantic_dim];
        dims.extend(&self.encoder_hidden);
        dims.push(2 * self.latent_dim);
        MlpSpec::uniform(
            dims,
            Activation::LeakyRelu(self.leaky_slope),
            Activation::Identity,
        )
    }

    pub fn decoder_spec(&self) -> Result<MlpSpec> {
        let mut dims = vec![self.latent_dim + self.semantic_dim];
        dims.extend(&self.decoder_hidden);
        dims.push(self.feature_dim);
        MlpSpec::uniform(
            dims,
            Activation::LeakyRelu(self.leaky_slope),
            Activation::Identity,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams {
    pub encoder: ParamStore,
    pub encoder_spec: MlpSpec,
    pub decoder: ParamStore,
    pub decoder_spec: MlpSpec,
    pub gmap: GMap,
    pub config: VaeConfig,
}

impl VaeParams {
    pub fn init(config: &VaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let encoder_spec = config.encoder_spec()?;
        let decoder_spec = config.decoder_spec()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = ParamStore::init(&encoder_spec, &mut rng);
        let decoder = ParamStore::init(&decoder_spec, &mut rng);
        Ok(Self {
            encoder,
            encoder_spec,
            decoder,
            decoder_spec,
            gmap: config.gmap(),
            config: config.clone(),
        })
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn semantic_dim(&self) -> usize {
        self.config.semantic_dim
    }

    pub fn zero_grads(&self) -> VaeGrads {
        VaeGrads {
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
        }
    }
}

impl FlatParams for VaeParams {
    fn num_scalars(&self) -> usize {
        self.encoder.num_scalars() + self.decoder.num_scalars()
    }

    fn scalar(&self, index: usize) -> f64 {
        let n = self.encoder.num_scalars();
        if index < n {
            self.encoder.scalar(index)
        } else {
            self.decoder.scalar(index - n)
        }
    }

    fn set_scalar(&mut self, index: usize, value: f64) {
        let n = self.encoder.num_scalars();
        if index < n {
            self.encoder.set_scalar(index, value)
        } else {
            self.decoder.set_scalar(index - n, value)
        }
    }
}

/// Gradients shaped like the encoder and decoder of a [`VaeParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct VaeGrads {
    pub encoder: ParamStore,
    pub decoder: ParamStore,
}

impl FlatParams for VaeGrads {
    fn num_scalars(&self) -> usize {
        self.encoder.num_scalars() + self.decoder.num_scalars()
    }

    fn scalar(&self, index: usize) -> f64 {
        let n = self.encoder.num_scalars();
        if index < n {
            self.encoder.scalar(index)
        } else {
            self.decoder.scalar(index - n)
        }
    }

    fn set_scalar(&mut self, index: usize, value: f64) {
        let n = self.encoder.num_scalars();
        if index < n {
            self.encoder.set_scalar(index, value)
        } else {
            self.decoder.set_scalar(index - n, value)
        }
    }
}

fn concat_rows(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.rows(), b.rows());
    let mut out = Matrix::zeros(a.rows(), a.cols() + b.cols());
    for r in 0..a.rows() {
        let dst = out.row_mut(r);
        dst[..a.cols()].copy_from_slice(a.row(r));
        dst[a.cols()..].copy_from_slice(b.row(r));
    }
    out
}

fn check_len(context: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::shape(context, expected, got));
    }
    Ok(())
}

/// Encoder applied to a batch; rows of the result are `(mu, raw log_var)`.
fn encoder_forward(
    params: &VaeParams,
    features: &Matrix,
    semantics: &Matrix,
) -> Result<(Matrix, crate::nnkit::ForwardTrace)> {
    check_len(
        "encoder feature input",
        params.feature_dim(),
        features.cols(),
    )?;
    check_len(
        "encoder semantic input",
        params.semantic_dim(),
        semantics.cols(),
    )?;
    mlp_forward(
        &params.encoder,
        &params.encoder_spec,
        &concat_rows(features, semantics),
    )
}

fn split_encoder_row(row: &[f64], n: usize) -> EncoderOutput {
    EncoderOutput {
        mu: row[..n].to_vec(),
        log_var: row[n..]
            .iter()
            .map(|v| v.clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP))
            .collect(),
    }
}

/// Posterior of `q(z | f, a)` for one crop.
pub fn encode(params: &VaeParams, feature: &[f64], semantic: &[f64]) -> Result<EncoderOutput> {
    let f = Matrix::row_vector(feature)?;
    let a = Matrix::row_vector(semantic)?;
    let (out, _) = encoder_forward(params, &f, &a)?;
    Ok(split_encoder_row(out.row(0), params.latent_dim()))
}

/// Decodes a batch of latent rows, all conditioned on their semantic rows.
pub fn decode_batch(params: &VaeParams, latents: &Matrix, semantics: &Matrix) -> Result<Matrix> {
    check_len("decoder latent input", params.latent_dim(), latents.cols())?;
    check_len(
        "decoder semantic input",
        params.semantic_dim(),
        semantics.cols(),
    )?;
    Ok(mlp_forward(
        &params.decoder,
        &params.decoder_spec,
        &concat_rows(latents, semantics),
    )?
    .0)
}

pub fn decode(params: &VaeParams, z: &LatentCode, semantic: &[f64]) -> Result<Vec<f64>> {
    let out = decode_batch(
        params,
        &Matrix::row_vector(&z.z)?,
        &Matrix::row_vector(semantic)?,
    )?;
    Ok(out.into_data())
}

/// One training example for [`vae_loss`]. `eps` is the reparameterisation
/// noise, supplied by the caller.
#[derive(Clone, Copy, Debug)]
pub struct LossSample<'a> {
    pub feature: &'a [f64],
    pub semantic: &'a [f64],
    pub iou: f64,
    pub eps: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    /// Batch mean of `λ·KL + ‖f − f̂‖²`.
    pub loss: f64,
    /// Batch mean KL term (unweighted).
    pub kl: f64,
    /// Batch mean squared reconstruction error.
    pub recon: f64,
    pub grads: VaeGrads,
}

struct LossForward {
    features: Matrix,
    enc_out: Matrix,
    enc_trace: crate::nnkit::ForwardTrace,
    posts: Vec<EncoderOutput>,
    raw_z: Matrix,
    recon_out: Matrix,
    dec_trace: crate::nnkit::ForwardTrace,
    kl_sum: f64,
    recon_sum: f64,
    loss: f64,
}

fn loss_forward(params: &VaeParams, batch: &[LossSample<'_>], mode: Mode) -> Result<LossForward> {
    if batch.is_empty() {
        return Err(Error::Config("vae_loss needs a non-empty batch".into()));
    }
    let n = params.latent_dim();
    let d = params.feature_dim();
    let s_dim = params.semantic_dim();
    let bsz = batch.len();
    for (i, smp) in batch.iter().enumerate() {
        check_len(&format!("sample {i} feature"), d, smp.feature.len())?;
        check_len(&format!("sample {i} semantic"), s_dim, smp.semantic.len())?;
        check_len(&format!("sample {i} eps"), n, smp.eps.len())?;
        if mode == Mode::Norm {
            g_map(&params.gmap, smp.iou)?;
        }
    }
    let features = Matrix::new(
        bsz,
        d,
        batch
            .iter()
            .flat_map(|s| s.feature.iter().copied())
            .collect(),
    )?;
    let semantics = Matrix::new(
        bsz,
        s_dim,
        batch
            .iter()
            .flat_map(|s| s.semantic.iter().copied())
            .collect(),
    )?;

    let (enc_out, enc_trace) = encoder_forward(params, &features, &semantics)?;
    let mut kl_sum = 0.0;
    let mut raw_z = Matrix::zeros(bsz, n);
    let mut dec_z = Matrix::zeros(bsz, n);
    let mut posts = Vec::with_capacity(bsz);
    for (i, smp) in batch.iter().enumerate() {
        let post = split_encoder_row(enc_out.row(i), n);
        kl_sum += kl_divergence(&post.mu, &post.log_var);
        let z = super::latent::reparameterize(&post, smp.eps);
        match mode {
            Mode::Vanilla => dec_z.row_mut(i).copy_from_slice(&z.z),
            Mode::Norm => dec_z
                .row_mut(i)
                .copy_from_slice(&rescale_latent(&z.z, smp.iou, &params.gmap)?.z),
        }
        raw_z.row_mut(i).copy_from_slice(&z.z);
        posts.push(post);
    }
    let (recon_out, dec_trace) = mlp_forward(
        &params.decoder,
        &params.decoder_spec,
        &concat_rows(&dec_z, &semantics),
    )?;
    let recon_sum: f64 = recon_out
        .data()
        .iter()
        .zip(features.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    let loss = (params.config.kl_weight * kl_sum + recon_sum) / bsz as f64;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            value: loss,
            context: format!(
                "evaluating a batch of {bsz} (kl sum {kl_sum}, recon sum {recon_sum})"
            ),
        });
    }
    Ok(LossForward {
        features,
        enc_out,
        enc_trace,
        posts,
        raw_z,
        recon_out,
        dec_trace,
        kl_sum,
        recon_sum,
        loss,
    })
}

/// Loss and gradients for a batch. In [`Mode::Norm`] the sampled latent is
/// rescaled to `g(iou)` before decoding and gradients flow through the
/// rescaling.
pub fn vae_loss(params: &VaeParams, batch: &[LossSample<'_>], mode: Mode) -> Result<LossOutput> {
    let fwd = loss_forward(params, batch, mode)?;
    let n = params.latent_dim();
    let bsz = batch.len();
    let lambda = params.config.kl_weight;
    let scale = 1.0 / bsz as f64;

    let mut d_recon = fwd.recon_out.clone();
    for (g, &t) in d_recon.data_mut().iter_mut().zip(fwd.features.data()) {
        *g = 2.0 * (*g - t) * scale;
    }
    let (dec_grads, d_dec_in) = mlp_backward(
        &params.decoder,
        &params.decoder_spec,
        &fwd.dec_trace,
        &d_recon,
    )?;
    let mut d_enc_out = Matrix::zeros(bsz, 2 * n);
    for (i, smp) in batch.iter().enumerate() {
        let d_zt = &d_dec_in.row(i)[..n];
        let d_z = match mode {
            Mode::Vanilla => d_zt.to_vec(),
            Mode::Norm => rescale_backward(fwd.raw_z.row(i), smp.iou, &params.gmap, d_zt)?,
        };
        let post = &fwd.posts[i];
        let raw_lv = &fwd.enc_out.row(i)[n..];
        let row = d_enc_out.row_mut(i);
        for k in 0..n {
            let (mu, lv) = (post.mu[k], post.log_var[k]);
            row[k] = d_z[k] + lambda * scale * mu;
            let g_lv =
                d_z[k] * 0.5 * (0.5 * lv).exp() * smp.eps[k] + lambda * scale * 0.5 * lv.exp_m1();
            // clamped entries pass no gradient
            row[n + k] = if raw_lv[k].abs() <= LOG_VAR_CLAMP {
                g_lv
            } else {
                0.0
            };
        }
    }
    let (enc_grads, _) = mlp_backward(
        &params.encoder,
        &params.encoder_spec,
        &fwd.enc_trace,
        &d_enc_out,
    )?;
    Ok(LossOutput {
        loss: fwd.loss,
        kl: fwd.kl_sum * scale,
        recon: fwd.recon_sum * scale,
        grads: VaeGrads {
            encoder: enc_grads,
            decoder: dec_grads,
        },
    })
}

/// Loss value from the forward pass alone; the finite-difference oracle uses
/// this.
pub fn vae_loss_value(params: &VaeParams, batch: &[LossSample<'_>], mode: Mode) -> Result<f64> {
    Ok(loss_forward(params, batch, mode)?.loss)
}
