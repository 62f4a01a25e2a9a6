//! Analytic gradients against central finite differences on small random
//! instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use cropdiv::nnkit::{
    dot, finite_diff_grad, max_relative_error, mlp_backward, mlp_forward, Activation, FlatParams,
    Matrix, MlpSpec, ParamStore,
};
use cropdiv::normvae::{
    reparameterize, reparameterize_backward, rescale_backward, rescale_latent, vae_loss,
    vae_loss_value, EncoderOutput, LossSample, Mode, VaeConfig, VaeParams,
};
use cropdiv::Result;

/// Feature, semantic, IoU and noise for one loss sample.
type LossInputs = (Vec<f64>, Vec<f64>, f64, Vec<f64>);

pub const TOLERANCE: f64 = 1e-4;
pub const STEP: f64 = 1e-5;
/// Largest layer width drawn for any instance.
pub const MAX_DIM: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub instances: usize,
    pub max_rel_error: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_activation(rng: &mut ChaCha8Rng) -> Activation {
    match rng.random_range(0..3) {
        0 => Activation::LeakyRelu(rng.random_range(0.01..0.5)),
        1 => Activation::Relu,
        _ => Activation::Identity,
    }
}

fn mlp_instance(rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let layers = rng.random_range(1..=3);
    let dims: Vec<usize> = (0..=layers).map(|_| rng.random_range(1..=8)).collect();
    let acts = (0..layers).map(|_| random_activation(rng)).collect();
    let spec = MlpSpec::new(dims.clone(), acts)?;
    let mut params = ParamStore::init(&spec, rng);
    for layer in params.layers_mut() {
        layer
            .bias
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    let batch = rng.random_range(1..=4);
    let input = Matrix::new(batch, dims[0], normal_vec(rng, batch * dims[0]))?;
    let upstream = Matrix::new(batch, dims[layers], normal_vec(rng, batch * dims[layers]))?;

    let (_, trace) = mlp_forward(&params, &spec, &input)?;
    let (pg, ig) = mlp_backward(&params, &spec, &trace, &upstream)?;
    let objective = |p: &ParamStore, x: &Matrix| -> f64 {
        let (out, _) = mlp_forward(p, &spec, x).expect("shapes checked");
        dot(out.data(), upstream.data())
    };
    let num_p = finite_diff_grad(|p: &ParamStore| objective(p, &input), &params, STEP)?;
    let x0 = input.data().to_vec();
    let num_x = finite_diff_grad(
        |x: &Vec<f64>| {
            objective(
                &params,
                &Matrix::new(batch, dims[0], x.clone()).expect("same shape"),
            )
        },
        &x0,
        STEP,
    )?;
    Ok((
        max_relative_error(&pg, &num_p),
        max_relative_error(&ig.data().to_vec(), &num_x),
    ))
}

fn reparameterize_instance(rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = rng.random_range(1..=MAX_DIM);
    let eps = normal_vec(rng, n);
    let upstream = normal_vec(rng, n);
    let mut flat = normal_vec(rng, n);
    flat.extend((0..n).map(|_| rng.random_range(-3.0..3.0)));
    let split = |v: &Vec<f64>| EncoderOutput {
        mu: v[..n].to_vec(),
        log_var: v[n..].to_vec(),
    };
    let (gm, gl) = reparameterize_backward(&split(&flat), &eps, &upstream);
    let analytic: Vec<f64> = gm.into_iter().chain(gl).collect();
    let numeric = finite_diff_grad(
        |v: &Vec<f64>| dot(&reparameterize(&split(v), &eps).z, &upstream),
        &flat,
        STEP,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}

fn rescale_instance(rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = rng.random_range(1..=MAX_DIM);
    let gmap = VaeConfig {
        latent_dim: n,
        ..VaeConfig::default()
    }
    .gmap();
    let iou = rng.random_range(0.5..=1.0);
    let mut z = normal_vec(rng, n);
    // Keep the norm away from zero so the finite differences stay smooth.
    let len = cropdiv::nnkit::norm(&z).max(1e-3);
    let scale = rng.random_range(0.5..3.0) / len;
    z.iter_mut().for_each(|v| *v *= scale);
    let upstream = normal_vec(rng, n);
    let analytic = rescale_backward(&z, iou, &gmap, &upstream)?;
    let numeric = finite_diff_grad(
        |v: &Vec<f64>| {
            dot(
                &rescale_latent(v, iou, &gmap)
                    .expect("norm bounded away from zero")
                    .z,
                &upstream,
            )
        },
        &z,
        STEP,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}

fn vae_instance(rng: &mut ChaCha8Rng, mode: Mode, base: &VaeConfig) -> Result<f64> {
    let cfg = VaeConfig {
        feature_dim: rng.random_range(1..=8),
        latent_dim: rng.random_range(1..=5),
        semantic_dim: rng.random_range(1..=4),
        encoder_hidden: (0..rng.random_range(1..=2))
            .map(|_| rng.random_range(2..=8))
            .collect(),
        decoder_hidden: (0..rng.random_range(1..=2))
            .map(|_| rng.random_range(2..=8))
            .collect(),
        mode,
        ..base.clone()
    };
    let mut params = VaeParams::init(&cfg, rng.random())?;
    for store in [&mut params.encoder, &mut params.decoder] {
        for layer in store.layers_mut() {
            layer
                .bias
                .iter_mut()
                .for_each(|b| *b = rng.random_range(-0.3..0.3));
        }
    }
    let batch = rng.random_range(1..=4);
    let owned: Vec<LossInputs> = (0..batch)
        .map(|_| {
            (
                normal_vec(rng, cfg.feature_dim),
                normal_vec(rng, cfg.semantic_dim),
                rng.random_range(0.5..=1.0),
                normal_vec(rng, cfg.latent_dim),
            )
        })
        .collect();
    let samples: Vec<LossSample<'_>> = owned
        .iter()
        .map(|(f, a, s, e)| LossSample {
            feature: f,
            semantic: a,
            iou: *s,
            eps: e,
        })
        .collect();
    let out = vae_loss(&params, &samples, mode)?;
    let numeric = finite_diff_grad(
        |p: &VaeParams| vae_loss_value(p, &samples, mode).unwrap_or(f64::NAN),
        &params,
        STEP,
    )?;
    Ok(max_relative_error(&out.grads.to_flat(), &numeric.to_flat()))
}

fn check<F>(name: &str, instances: usize, rng: &mut ChaCha8Rng, mut f: F) -> Result<CheckOutcome>
where
    F: FnMut(&mut ChaCha8Rng) -> Result<f64>,
{
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        worst = worst.max(f(rng)?);
    }
    Ok(CheckOutcome {
        name: name.to_owned(),
        instances,
        max_rel_error: worst,
    })
}

/// Runs every check on `instances` seeded random instances. `base` supplies
/// the LeakyReLU slope, KL weight and norm range of the VAE checks.
pub fn run_suite(seed: u64, instances: usize, base: &VaeConfig) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input_err: f64 = 0.0;
    let mut out = vec![check("mlp_backward params", instances, &mut rng, |r| {
        let (p, x) = mlp_instance(r)?;
        input_err = input_err.max(x);
        Ok(p)
    })?];
    out.push(CheckOutcome {
        name: "mlp_backward input".into(),
        instances,
        max_rel_error: input_err,
    });
    out.push(check(
        "reparameterize",
        instances,
        &mut rng,
        reparameterize_instance,
    )?);
    out.push(check(
        "rescale_backward",
        instances,
        &mut rng,
        rescale_instance,
    )?);
    for mode in [Mode::Vanilla, Mode::Norm] {
        out.push(check(
            &format!("vae_loss {}", mode.as_str()),
            instances,
            &mut rng,
            |r| vae_instance(r, mode, base),
        )?);
    }
    Ok(out)
}
