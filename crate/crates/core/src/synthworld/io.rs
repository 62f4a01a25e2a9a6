//! `CDIVDSv1` dataset files.
//!
//! Layout (little-endian): magic, u32 `D S R K n_base n_novel`, one u32
//! sample count per class (base then novel), class records
//! `(id u32, semantic S×f64, prototype D×f64, crop_basis D×R×f64 row-major,
//! noise_sigma f64)`, then sample records
//! `(class_id u32, iou f64, box 4×f64, feature D×f64)`, base samples first.

use std::collections::BTreeMap;
use std::path::Path;

use super::{ClassSpec, CropSample, DatasetSplit};
use crate::binio::{atomic_write, read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::nnkit::Matrix;

pub const DATASET_MAGIC: &[u8; 8] = b"CDIVDSv1";

pub(crate) fn write_sample(w: &mut Writer, s: &CropSample) {
    w.u32(s.class_id);
    w.f64(s.iou);
    w.f64s(&s.bbox.coords());
    w.f64s(&s.feature);
}

pub fn encode_dataset(split: &DatasetSplit) -> Result<Vec<u8>> {
    split.validate()?;
    let mut w = Writer::new();
    w.bytes(DATASET_MAGIC);
    for v in [
        split.feature_dim(),
        split.semantic_dim(),
        split.crop_rank(),
        split.shots,
        split.base_classes.len(),
        split.novel_classes.len(),
    ] {
        w.len_u32(v);
    }
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for s in split.base_samples.iter().chain(&split.novel_samples) {
        *counts.entry(s.class_id).or_default() += 1;
    }
    for c in split.classes() {
        w.len_u32(counts.get(&c.class_id).copied().unwrap_or(0));
    }
    for c in split.classes() {
        w.u32(c.class_id);
        w.f64s(&c.semantic);
        w.f64s(&c.prototype);
        w.f64s(c.crop_basis.data());
        w.f64(c.noise_sigma);
    }
    for s in split.base_samples.iter().chain(&split.novel_samples) {
        write_sample(&mut w, s);
    }
    Ok(w.into_inner())
}

pub(crate) fn read_sample(r: &mut Reader<'_>, d: usize) -> Result<CropSample> {
    let class_id = r.u32("sample class id")?;
    let iou_at = r.offset();
    let iou = r.f64("sample iou")?;
    let box_at = r.offset();
    let c = r.f64s(4, "sample box")?;
    let feature = r.f64s(d, "sample feature")?;
    if !(0.5..=1.0).contains(&iou) {
        return Err(Error::Parse {
            offset: iou_at,
            message: format!("iou {iou} outside [0.5, 1]"),
        });
    }
    let bbox = BoundingBox::new(c[0], c[1], c[2], c[3]).map_err(|e| Error::Parse {
        offset: box_at,
        message: e.to_string(),
    })?;
    Ok(CropSample {
        feature,
        class_id,
        iou,
        bbox,
    })
}

pub fn decode_dataset(bytes: &[u8]) -> Result<DatasetSplit> {
    let mut r = Reader::new(bytes);
    r.expect_magic(DATASET_MAGIC)?;
    let d = r.count("D")?;
    let s = r.count("S")?;
    let rank = r.count("R")?;
    let shots = r.count("K")?;
    let n_base = r.count("base class count")?;
    let n_novel = r.count("novel class count")?;
    if d == 0 || s == 0 || rank == 0 || rank > d {
        return Err(r.error(format!("invalid dimensions D={d} S={s} R={rank}")));
    }
    let n_classes = n_base + n_novel;
    // Each class record is at least this long; reject absurd headers before allocating.
    let class_bytes = 4 + 8 * (s + d + d * rank + 1);
    if n_classes.saturating_mul(class_bytes + 4) > r.remaining() {
        return Err(r.error(format!(
            "header declares {n_classes} classes but the file is too short"
        )));
    }
    let mut counts = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        counts.push(r.count("per-class sample count")?);
    }
    let mut classes = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let class_id = r.u32("class id")?;
        let semantic = r.f64s(s, "semantic")?;
        let prototype = r.f64s(d, "prototype")?;
        let basis = r.f64s(d * rank, "crop basis")?;
        let noise_sigma = r.f64("noise sigma")?;
        classes.push(ClassSpec {
            class_id,
            semantic,
            prototype,
            crop_basis: Matrix::new(d, rank, basis)?,
            noise_sigma,
        });
    }
    let novel_classes = classes.split_off(n_base);
    let base_ids: BTreeMap<u32, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.class_id, i))
        .collect();
    let novel_ids: BTreeMap<u32, usize> = novel_classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.class_id, n_base + i))
        .collect();

    let total: usize = counts.iter().sum();
    let record = 4 + 8 * (1 + 4 + d);
    if total.saturating_mul(record) != r.remaining() {
        return Err(r.error(format!(
            "header declares {total} samples ({} bytes) but {} bytes remain",
            total.saturating_mul(record),
            r.remaining()
        )));
    }
    let mut seen = vec![0usize; n_classes];
    let mut base_samples = Vec::new();
    let mut novel_samples = Vec::new();
    for _ in 0..total {
        let at = r.offset();
        let sample = read_sample(&mut r, d)?;
        if let Some(&i) = base_ids.get(&sample.class_id) {
            seen[i] += 1;
            base_samples.push(sample);
        } else if let Some(&i) = novel_ids.get(&sample.class_id) {
            seen[i] += 1;
            novel_samples.push(sample);
        } else {
            return Err(Error::Parse {
                offset: at,
                message: format!("sample references unknown class {}", sample.class_id),
            });
        }
    }
    r.expect_end()?;
    if seen != counts {
        return Err(r.error("per-class sample counts do not match the header"));
    }
    let split = DatasetSplit {
        shots,
        base_classes: classes,
        novel_classes,
        base_samples,
        novel_samples,
    };
    split.validate()?;
    Ok(split)
}

pub fn save_dataset(split: &DatasetSplit, path: &Path) -> Result<()> {
    atomic_write(path, &encode_dataset(split)?)
}

pub fn load_dataset(path: &Path) -> Result<DatasetSplit> {
    decode_dataset(&read_file(path)?)
}

/// Reads a JSON array of semantic vectors.
pub fn load_semantics(path: &Path) -> Result<Vec<Vec<f64>>> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        offset: e.column(),
        message: format!("{}: {e}", path.display()),
    })
}
