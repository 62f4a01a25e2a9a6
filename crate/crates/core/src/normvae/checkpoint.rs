//! `NVAEckp1` checkpoints.
//!
//! Layout (little-endian): magic; u32 `D N S`; u32 encoder layer-dim count
//! followed by the dims; the same for the decoder; f64 g-map slope and intercept (units of √N);
//! f64 LeakyReLU slope; f64 KL weight; u8 mode; encoder then decoder
//! parameters as f64 in flat order; u32 CRC32 of every preceding byte.

use std::path::Path;

use super::latent::GMap;
use super::model::{Mode, VaeConfig, VaeParams};
use crate::binio::{atomic_write, read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::nnkit::{FlatParams, ParamStore};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NVAEckp1";

pub fn encode_checkpoint(params: &VaeParams) -> Vec<u8> {
    let cfg = &params.config;
    let mut w = Writer::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.len_u32(cfg.feature_dim);
    w.len_u32(cfg.latent_dim);
    w.len_u32(cfg.semantic_dim);
    for spec in [&params.encoder_spec, &params.decoder_spec] {
        w.len_u32(spec.layer_dims().len());
        for &d in spec.layer_dims() {
            w.len_u32(d);
        }
    }
    w.f64(params.gmap.slope);
    w.f64(params.gmap.intercept);
    w.f64(cfg.leaky_slope);
    w.f64(cfg.kl_weight);
    w.u8(cfg.mode.to_byte());
    for store in [&params.encoder, &params.decoder] {
        for block in store.blocks() {
            w.f64s(block);
        }
    }
    let crc = crc32fast::hash(w.as_slice());
    w.u32(crc);
    w.into_inner()
}

fn read_dims(r: &mut Reader<'_>, what: &str) -> Result<Vec<usize>> {
    let count = r.count(what)?;
    if !(2..=64).contains(&count) {
        return Err(r.error(format!("{what}: implausible layer count {count}")));
    }
    (0..count).map(|_| r.count(what)).collect()
}

fn read_store(r: &mut Reader<'_>, spec: &crate::nnkit::MlpSpec, what: &str) -> Result<ParamStore> {
    let mut store = ParamStore::zeros(spec);
    let values = r.f64s(store.num_scalars(), what)?;
    for (block, chunk) in store.blocks_mut().zip(chunk_by_blocks(&values, spec)) {
        block.copy_from_slice(chunk);
    }
    Ok(store)
}

fn chunk_by_blocks<'a>(values: &'a [f64], spec: &crate::nnkit::MlpSpec) -> Vec<&'a [f64]> {
    let mut out = Vec::new();
    let mut rest = values;
    for w in spec.layer_dims().windows(2) {
        let (weights, tail) = rest.split_at(w[0] * w[1]);
        let (bias, tail) = tail.split_at(w[1]);
        out.push(weights);
        out.push(bias);
        rest = tail;
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<VaeParams> {
    let mut head = Reader::new(bytes);
    head.expect_magic(CHECKPOINT_MAGIC)?;
    if bytes.len() < 12 {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: "truncated checkpoint".into(),
        });
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(payload);

    let mut r = Reader::new(payload);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let parsed = (|| -> Result<VaeParams> {
        let feature_dim = r.count("D")?;
        let latent_dim = r.count("N")?;
        let semantic_dim = r.count("S")?;
        let enc_dims = read_dims(&mut r, "encoder dims")?;
        let dec_dims = read_dims(&mut r, "decoder dims")?;
        let slope = r.f64("g-map slope")?;
        let intercept = r.f64("g-map intercept")?;
        let leaky_slope = r.f64("leaky slope")?;
        let kl_weight = r.f64("kl weight")?;
        let mode_at = r.offset();
        let mode = Mode::from_byte(r.u8("mode")?).ok_or_else(|| Error::Parse {
            offset: mode_at,
            message: "unknown mode byte".into(),
        })?;
        let want_enc = (feature_dim + semantic_dim, 2 * latent_dim);
        let want_dec = (latent_dim + semantic_dim, feature_dim);
        if (enc_dims[0], *enc_dims.last().unwrap()) != want_enc
            || (dec_dims[0], *dec_dims.last().unwrap()) != want_dec
        {
            return Err(r.error(format!(
                "layer dims {enc_dims:?} / {dec_dims:?} disagree with D={feature_dim} N={latent_dim} S={semantic_dim}"
            )));
        }
        let gmap = GMap {
            slope,
            intercept,
            latent_dim,
        };
        let config = VaeConfig {
            feature_dim,
            latent_dim,
            semantic_dim,
            encoder_hidden: enc_dims[1..enc_dims.len() - 1].to_vec(),
            decoder_hidden: dec_dims[1..dec_dims.len() - 1].to_vec(),
            leaky_slope,
            norm_range: [gmap.multiplier(1.0), gmap.multiplier(0.5)],
            kl_weight,
            mode,
            ..VaeConfig::default()
        };
        config.validate()?;
        let encoder_spec = config.encoder_spec()?;
        let decoder_spec = config.decoder_spec()?;
        let encoder = read_store(&mut r, &encoder_spec, "encoder parameters")?;
        let decoder = read_store(&mut r, &decoder_spec, "decoder parameters")?;
        r.expect_end()?;
        Ok(VaeParams {
            encoder,
            encoder_spec,
            decoder,
            decoder_spec,
            gmap,
            config,
        })
    })();
    match parsed {
        Ok(p) if stored == actual => Ok(p),
        Ok(_) => Err(Error::Parse {
            offset: payload.len(),
            message: format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}"),
        }),
        Err(e) => Err(e),
    }
}

pub fn save_checkpoint(params: &VaeParams, path: &Path) -> Result<()> {
    atomic_write(path, &encode_checkpoint(params))
}

pub fn load_checkpoint(path: &Path) -> Result<VaeParams> {
    decode_checkpoint(&read_file(path)?)
}
