//! `CDIVGFv1` generated-feature files.
//!
//! Layout (little-endian): magic, u32 `D count`, then `count` records. Each
//! record is a dataset sample record `(class_id u32, iou f64, box 4×f64,
//! feature D×f64)` followed by the latent norm β as f64. Generated features
//! have no box; they carry the unit box and the IoU `g⁻¹(β)` clamped to
//! [0.5, 1].

use std::path::Path;

use super::generate::GeneratedFeature;
use super::latent::GMap;
use crate::binio::{atomic_write, read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::synthworld::{read_sample, write_sample, CropSample};

pub const GENERATED_MAGIC: &[u8; 8] = b"CDIVGFv1";

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedRecord {
    pub sample: CropSample,
    pub beta: f64,
}

impl GeneratedRecord {
    pub fn new(class_id: u32, generated: GeneratedFeature, gmap: &GMap) -> Self {
        let iou = gmap.inverse(generated.beta).clamp(0.5, 1.0);
        Self {
            sample: CropSample {
                feature: generated.feature,
                class_id,
                iou: if iou.is_nan() { 1.0 } else { iou },
                bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0).expect("unit box"),
            },
            beta: generated.beta,
        }
    }
}

pub fn encode_generated(records: &[GeneratedRecord]) -> Result<Vec<u8>> {
    let d = records.first().map_or(0, |r| r.sample.feature.len());
    let mut w = Writer::new();
    w.bytes(GENERATED_MAGIC);
    w.len_u32(d);
    w.len_u32(records.len());
    for (i, r) in records.iter().enumerate() {
        if r.sample.feature.len() != d {
            return Err(Error::shape(
                format!("generated record {i}"),
                d,
                r.sample.feature.len(),
            ));
        }
        write_sample(&mut w, &r.sample);
        w.f64(r.beta);
    }
    Ok(w.into_inner())
}

pub fn decode_generated(bytes: &[u8]) -> Result<Vec<GeneratedRecord>> {
    let mut r = Reader::new(bytes);
    r.expect_magic(GENERATED_MAGIC)?;
    let d = r.count("D")?;
    let n = r.count("record count")?;
    let record = 4 + 8 * (1 + 4 + d + 1);
    if n.saturating_mul(record) != r.remaining() {
        return Err(r.error(format!(
            "header declares {n} records but {} bytes remain",
            r.remaining()
        )));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let sample = read_sample(&mut r, d)?;
        let beta = r.f64("beta")?;
        out.push(GeneratedRecord { sample, beta });
    }
    r.expect_end()?;
    Ok(out)
}

pub fn save_generated(records: &[GeneratedRecord], path: &Path) -> Result<()> {
    atomic_write(path, &encode_generated(records)?)
}

pub fn load_generated(path: &Path) -> Result<Vec<GeneratedRecord>> {
    decode_generated(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records() -> Vec<GeneratedRecord> {
        let gmap = GMap::default_for(16);
        [4.0, 12.0, 20.0, 0.1]
            .iter()
            .enumerate()
            .map(|(i, &beta)| {
                GeneratedRecord::new(
                    i as u32,
                    GeneratedFeature {
                        feature: vec![i as f64, -0.5, 1e-300],
                        beta,
                    },
                    &gmap,
                )
            })
            .collect()
    }

    #[test]
    fn iou_tag_inverts_the_gmap() {
        let r = records();
        assert_eq!(r[0].sample.iou, 1.0);
        assert_eq!(r[1].sample.iou, 0.75);
        assert_eq!(r[2].sample.iou, 0.5);
        assert_eq!(r[3].sample.iou, 1.0);
    }

    #[test]
    fn round_trip_is_bitwise() {
        let r = records();
        let bytes = encode_generated(&r).unwrap();
        assert_eq!(&bytes[..8], GENERATED_MAGIC);
        assert_eq!(decode_generated(&bytes).unwrap(), r);
        assert!(decode_generated(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_generated(&extra).is_err());
        assert!(decode_generated(&encode_generated(&[]).unwrap())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn ragged_records_rejected() {
        let mut r = records();
        r[1].sample.feature.push(0.0);
        assert!(encode_generated(&r).is_err());
    }
}
