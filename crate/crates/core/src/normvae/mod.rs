//! Conditional VAE whose sampled latent is rescaled to an IoU-dependent norm
//! before decoding, plus the plain conditional VAE it is compared against.
//!
//! Pipeline for one crop `(f, a, s)`:
//!
//! 1. `encode(f, a)` gives `(mu, log_var)`;
//! 2. `z = mu + exp(½ log_var) ⊙ eps`;
//! 3. in norm mode `z̃ = z/‖z‖ · g(s)` with `g` linear and decreasing, so
//!    poorly aligned crops live at large latent norms;
//! 4. `decode(z̃, a)` reconstructs `f`.
//!
//! At generation time the norm is a free knob: decoding random directions at
//! norm `β` yields features of the difficulty associated with `g⁻¹(β)`.

mod checkpoint;
mod export;
mod generate;
mod latent;
mod model;
mod train;


pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use export::{
    decode_generated, encode_generated, load_generated, save_generated, GeneratedRecord,
    GENERATED_MAGIC,
};
pub use generate::{
    default_beta_schedule, generate, generate_from_prior, scheduled_latents, GeneratedFeature,
    GenerationRequest, BETA_STEP,
};
pub use latent::{
    g_map, kl_divergence, reparameterize, reparameterize_backward, rescale_backward,
    rescale_latent, EncoderOutput, GMap, LatentCode, DEGENERATE_NORM, LOG_VAR_CLAMP,
};
pub use model::{
    decode, decode_batch, encode, vae_loss, vae_loss_value, LossOutput, LossSample, Mode,
    VaeConfig, VaeGrads, VaeParams,
};
pub use train::{train, TrainReport};
