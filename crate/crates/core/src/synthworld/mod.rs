//! Seeded synthetic stand-in for detector crop features.
//!
//! Each class owns a clean prototype feature and a small orthonormal basis of
//! "crop corruption" directions. A crop at IoU `s` is
//!
//! ```text
//! f = prototype + γ·(1 − s)·(cos θ · T·u + sin θ · C·v) + σ·η,   θ = π(1 − s)
//! ```
//!
//! where `T` and `C` split the basis columns into truncation and context
//! halves, `u` and `v` are random unit vectors in the positive orthant of
//! their halves, and `η` is standard Gaussian noise. Poor crops drift away
//! from the prototype by a distance proportional to `1 − s`. Slightly loose
//! crops mostly lose object parts; at IoU 0.5 the drift is pure background
//! context, so the drift direction turns as the IoU falls.
//!
//! Prototypes and bases are smooth functions of the class semantic vector,
//! so a generator conditioned on semantics can extrapolate to unseen classes.

mod io;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{jitter_to_iou, BoundingBox};
use crate::nnkit::{dot, norm, Matrix};

pub use io::{decode_dataset, encode_dataset, load_dataset, load_semantics, save_dataset};
pub(crate) use io::{read_sample, write_sample};

/// Requested and achieved crop IoU may differ by at most this much.
pub const IOU_MATCH_TOLERANCE: f64 = 0.02;
const BOX_ATTEMPTS: usize = 100_000;
const SEMANTIC_ATTEMPTS: usize = 1000;
const MAX_ABS_COSINE: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    /// Feature dimension D.
    pub feature_dim: usize,
    /// Semantic embedding dimension S.
    pub semantic_dim: usize,
    /// Rank R ≥ 2 of each class's corruption basis; the first ⌈R/2⌉ columns
    /// model truncation, the rest background context.
    pub crop_rank: usize,
    pub base_classes: usize,
    pub novel_classes: usize,
    pub samples_per_base_class: usize,
    /// K, ground-truth shots per novel class.
    pub shots: usize,
    /// Corruption gain γ.
    pub gamma: f64,
    pub noise_sigma: f64,
    /// Typical prototype norm.
    pub prototype_scale: f64,
    /// Weight of the class-specific part of each corruption basis relative to
    /// the shared part.
    pub basis_mix: f64,
    pub seed: u64,
    /// Optional JSON file with one semantic vector per class (base classes
    /// first). Vectors are normalised on load.
    pub semantic_file: Option<PathBuf>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            semantic_dim: 16,
            crop_rank: 4,
            base_classes: 20,
            novel_classes: 5,
            samples_per_base_class: 200,
            shots: 1,
            gamma: 2.0,
            noise_sigma: 0.1,
            prototype_scale: 0.5,
            basis_mix: 0.1,
            seed: 0,
            semantic_file: None,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("semantic_dim", self.semantic_dim),
            ("shots", self.shots),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.base_classes + self.novel_classes == 0 {
            return Err(Error::Config("world needs at least one class".into()));
        }
        if self.crop_rank < 2 {
            return Err(Error::Config(format!(
                "crop_rank must be at least 2 (truncation and context), got {}",
                self.crop_rank
            )));
        }
        if self.crop_rank > self.feature_dim {
            return Err(Error::Config(format!(
                "crop_rank {} exceeds feature_dim {}",
                self.crop_rank, self.feature_dim
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("prototype_scale", self.prototype_scale),
            ("basis_mix", self.basis_mix),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.base_classes + self.novel_classes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassSpec {
    pub class_id: u32,
    /// Unit-norm semantic embedding, dim S.
    pub semantic: Vec<f64>,
    /// Clean feature centre, dim D.
    pub prototype: Vec<f64>,
    /// D × R with orthonormal columns.
    pub crop_basis: Matrix,
    pub noise_sigma: f64,
}

impl ClassSpec {
    pub fn feature_dim(&self) -> usize {
        self.prototype.len()
    }

    pub fn distance_to_prototype(&self, feature: &[f64]) -> f64 {
        feature
            .iter()
            .zip(&self.prototype)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CropSample {
    pub feature: Vec<f64>,
    pub class_id: u32,
    /// IoU of `bbox` with its ground-truth box, in [0.5, 1].
    pub iou: f64,
    pub bbox: BoundingBox,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub shots: usize,
    pub base_classes: Vec<ClassSpec>,
    pub novel_classes: Vec<ClassSpec>,
    pub base_samples: Vec<CropSample>,
    pub novel_samples: Vec<CropSample>,
}

impl DatasetSplit {
    pub fn feature_dim(&self) -> usize {
        self.classes().next().map_or(0, ClassSpec::feature_dim)
    }

    pub fn semantic_dim(&self) -> usize {
        self.classes().next().map_or(0, |c| c.semantic.len())
    }

    pub fn crop_rank(&self) -> usize {
        self.classes().next().map_or(0, |c| c.crop_basis.cols())
    }

    pub fn classes(&self) -> impl Iterator<Item = &ClassSpec> {
        self.base_classes.iter().chain(&self.novel_classes)
    }

    pub fn class(&self, id: u32) -> Option<&ClassSpec> {
        self.classes().find(|c| c.class_id == id)
    }

    /// Class id → semantic vector for every class in the split.
    pub fn semantics(&self) -> BTreeMap<u32, Vec<f64>> {
        self.classes()
            .map(|c| (c.class_id, c.semantic.clone()))
            .collect()
    }

    /// Checks disjointness, dimensions, shot counts, and sample ranges.
    pub fn validate(&self) -> Result<()> {
        let d = self.feature_dim();
        let s = self.semantic_dim();
        let r = self.crop_rank();
        let base: BTreeSet<u32> = self.base_classes.iter().map(|c| c.class_id).collect();
        let novel: BTreeSet<u32> = self.novel_classes.iter().map(|c| c.class_id).collect();
        if base.len() != self.base_classes.len() || novel.len() != self.novel_classes.len() {
            return Err(Error::Config("duplicate class id".into()));
        }
        if let Some(id) = base.intersection(&novel).next() {
            return Err(Error::Config(format!("class {id} is both base and novel")));
        }
        for c in self.classes() {
            if c.feature_dim() != d
                || c.semantic.len() != s
                || c.crop_basis.rows() != d
                || c.crop_basis.cols() != r
            {
                return Err(Error::shape(
                    format!("class {}", c.class_id),
                    format!("D={d} S={s} R={r}"),
                    "different dims",
                ));
            }
        }
        let check = |samples: &[CropSample], ids: &BTreeSet<u32>, which: &str| -> Result<()> {
            for (i, smp) in samples.iter().enumerate() {
                if !ids.contains(&smp.class_id) {
                    return Err(Error::Config(format!(
                        "{which} sample {i} has foreign class {}",
                        smp.class_id
                    )));
                }
                if smp.feature.len() != d {
                    return Err(Error::shape(
                        format!("{which} sample {i}"),
                        d,
                        smp.feature.len(),
                    ));
                }
                if !(0.5..=1.0).contains(&smp.iou) {
                    return Err(Error::IouDomain(smp.iou));
                }
            }
            Ok(())
        };
        check(&self.base_samples, &base, "base")?;
        check(&self.novel_samples, &novel, "novel")?;
        if !self.novel_samples.is_empty() {
            for id in &novel {
                let n = self
                    .novel_samples
                    .iter()
                    .filter(|s| s.class_id == *id)
                    .count();
                if n != self.shots {
                    return Err(Error::Config(format!(
                        "novel class {id} has {n} shots, expected {}",
                        self.shots
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Independent generator streams derived from the world seed.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Structure = 1,
    Semantics = 2,
    BaseSamples = 3,
    NovelShots = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, sd: f64) -> Vec<f64> {
    (0..n)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn normalized(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = norm(&v);
    if n <= 1e-12 || !n.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

/// Orthonormalises the columns of `m` in place order (two passes of modified
/// Gram–Schmidt). Returns `None` if the columns are numerically dependent.
pub fn orthonormalize_columns(m: &Matrix) -> Option<Matrix> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for c in 0..cols {
        let mut v: Vec<f64> = (0..rows).map(|r| m[(r, c)]).collect();
        let original = norm(&v);
        for _ in 0..2 {
            for prev in &q {
                let p = dot(prev, &v);
                v.iter_mut().zip(prev).for_each(|(x, y)| *x -= p * y);
            }
        }
        if norm(&v) <= 1e-10 * original.max(1.0) {
            return None;
        }
        q.push(normalized(v)?);
    }
    let mut out = Matrix::zeros(rows, cols);
    for (c, col) in q.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            out[(r, c)] = v;
        }
    }
    Some(out)
}

/// Hidden linear structure linking semantics to prototypes and bases.
struct Structure {
    /// D × S, entries N(0, 1/D).
    semantic_to_feature: Matrix,
    /// D × R orthonormal.
    shared_basis: Matrix,
    /// S matrices of D × R, entries N(0, 1/D).
    basis_mixing: Vec<Matrix>,
}

impl Structure {
    fn sample(cfg: &WorldConfig) -> Self {
        let (d, s, r) = (cfg.feature_dim, cfg.semantic_dim, cfg.crop_rank);
        let mut rng = stream_rng(cfg.seed, Stream::Structure);
        let sd = 1.0 / (d as f64).sqrt();
        let semantic_to_feature =
            Matrix::new(d, s, gaussian_vec(&mut rng, d * s, sd)).expect("dims");
        // Context columns live in the span of the prototypes, so heavy
        // background looks like other objects.
        let t = r.div_ceil(2);
        let shared_basis = loop {
            let mut g = Matrix::new(d, r, gaussian_vec(&mut rng, d * r, sd)).expect("dims");
            for c in t..r {
                let mix = gaussian_vec(&mut rng, s, 1.0 / (s as f64).sqrt());
                for i in 0..d {
                    g[(i, c)] = dot(semantic_to_feature.row(i), &mix);
                }
            }
            if let Some(q) = orthonormalize_columns(&g) {
                break q;
            }
        };
        let basis_mixing = (0..s)
            .map(|_| Matrix::new(d, r, gaussian_vec(&mut rng, d * r, sd)).expect("dims"))
            .collect();
        Self {
            semantic_to_feature,
            shared_basis,
            basis_mixing,
        }
    }

    fn class(&self, cfg: &WorldConfig, class_id: u32, semantic: Vec<f64>) -> Result<ClassSpec> {
        let d = cfg.feature_dim;
        let prototype: Vec<f64> = (0..d)
            .map(|i| cfg.prototype_scale * dot(self.semantic_to_feature.row(i), &semantic))
            .collect();
        let mut raw = self.shared_basis.clone();
        for (a, mix) in semantic.iter().zip(&self.basis_mixing) {
            for (x, m) in raw.data_mut().iter_mut().zip(mix.data()) {
                *x += cfg.basis_mix * a * m;
            }
        }
        let crop_basis = orthonormalize_columns(&raw).ok_or_else(|| Error::SamplingExhausted {
            what: format!("corruption basis of class {class_id} is rank deficient"),
            attempts: 1,
        })?;
        Ok(ClassSpec {
            class_id,
            semantic,
            prototype,
            crop_basis,
            noise_sigma: cfg.noise_sigma,
        })
    }
}

fn max_abs_cosine(candidate: &[f64], accepted: &[Vec<f64>]) -> f64 {
    accepted
        .iter()
        .map(|a| dot(a, candidate).abs())
        .fold(0.0, f64::max)
}

fn sample_semantics(cfg: &WorldConfig) -> Result<Vec<Vec<f64>>> {
    let mut rng = stream_rng(cfg.seed, Stream::Semantics);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_classes());
    for _ in 0..cfg.num_classes() {
        let mut accepted = None;
        for _ in 0..SEMANTIC_ATTEMPTS {
            let Some(v) = normalized(gaussian_vec(&mut rng, cfg.semantic_dim, 1.0)) else {
                continue;
            };
            if max_abs_cosine(&v, &out) < MAX_ABS_COSINE {
                accepted = Some(v);
                break;
            }
        }
        out.push(accepted.ok_or_else(|| Error::SamplingExhausted {
            what: format!(
                "semantic vector {} with |cosine| < {MAX_ABS_COSINE}",
                out.len()
            ),
            attempts: SEMANTIC_ATTEMPTS,
        })?);
    }
    Ok(out)
}

/// Builds the class skeleton (no samples). Base classes get ids
/// `0..base_classes`, novel classes follow.
pub fn make_world(cfg: &WorldConfig) -> Result<DatasetSplit> {
    cfg.validate()?;
    let semantics = match &cfg.semantic_file {
        Some(path) => load_semantics(path)?,
        None => sample_semantics(cfg)?,
    };
    make_world_with_semantics(cfg, semantics)
}

/// Like [`make_world`] with caller-supplied semantic vectors (normalised
/// here; must be pairwise |cosine| < 0.95).
pub fn make_world_with_semantics(
    cfg: &WorldConfig,
    semantics: Vec<Vec<f64>>,
) -> Result<DatasetSplit> {
    cfg.validate()?;
    if semantics.len() != cfg.num_classes() {
        return Err(Error::Config(format!(
            "{} semantic vectors for {} classes",
            semantics.len(),
            cfg.num_classes()
        )));
    }
    let mut units: Vec<Vec<f64>> = Vec::with_capacity(semantics.len());
    for (i, v) in semantics.into_iter().enumerate() {
        if v.len() != cfg.semantic_dim {
            return Err(Error::shape(
                format!("semantic vector {i}"),
                cfg.semantic_dim,
                v.len(),
            ));
        }
        let u = normalized(v)
            .ok_or_else(|| Error::Config(format!("semantic vector {i} has zero norm")))?;
        if max_abs_cosine(&u, &units) >= MAX_ABS_COSINE {
            return Err(Error::Config(format!(
                "semantic vector {i} is nearly parallel to an earlier one"
            )));
        }
        units.push(u);
    }
    let structure = Structure::sample(cfg);
    let mut classes = units
        .into_iter()
        .enumerate()
        .map(|(i, a)| structure.class(cfg, i as u32, a))
        .collect::<Result<Vec<_>>>()?;
    let novel_classes = classes.split_off(cfg.base_classes);
    Ok(DatasetSplit {
        shots: cfg.shots,
        base_classes: classes,
        novel_classes,
        base_samples: Vec::new(),
        novel_samples: Vec::new(),
    })
}

fn positive_unit<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = gaussian_vec(rng, n, 1.0)
            .into_iter()
            .map(f64::abs)
            .collect();
        if let Some(d) = normalized(raw) {
            return d;
        }
    }
}

/// A plausible ground-truth box inside a 640 × 480 image.
fn random_gt_box<R: Rng + ?Sized>(rng: &mut R) -> BoundingBox {
    let w = rng.random_range(40.0..240.0);
    let h = rng.random_range(40.0..180.0);
    let x1 = rng.random_range(0.0..(640.0 - w));
    let y1 = rng.random_range(0.0..(480.0 - h));
    BoundingBox::new(x1, y1, x1 + w, y1 + h).expect("positive extent")
}

/// Draws one crop of `class` near IoU `iou`. The recorded IoU (and the one
/// used for corruption) is the achieved IoU of the sampled box.
pub fn sample_crop_feature<R: Rng + ?Sized>(
    class: &ClassSpec,
    iou: f64,
    gamma: f64,
    rng: &mut R,
) -> Result<CropSample> {
    if !(0.5..=1.0).contains(&iou) {
        return Err(Error::IouDomain(iou));
    }
    let gt = random_gt_box(rng);
    let (bbox, achieved) = jitter_to_iou(&gt, iou, IOU_MATCH_TOLERANCE, BOX_ATTEMPTS, rng)?;

    // Columns [0, t) of the basis carry truncation, [t, R) background context.
    let rank = class.crop_basis.cols();
    let t = rank.div_ceil(2);
    let theta = std::f64::consts::PI * (1.0 - achieved);
    let mut coords = positive_unit(rng, t);
    coords.iter_mut().for_each(|c| *c *= theta.cos());
    if rank > t {
        coords.extend(
            positive_unit(rng, rank - t)
                .into_iter()
                .map(|c| c * theta.sin()),
        );
    }
    let drift = gamma * (1.0 - achieved);
    let mut feature = class.prototype.clone();
    for (i, f) in feature.iter_mut().enumerate() {
        *f += drift * dot(class.crop_basis.row(i), &coords);
    }
    if class.noise_sigma > 0.0 {
        for f in feature.iter_mut() {
            *f += class.noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(CropSample {
        feature,
        class_id: class.class_id,
        iou: achieved,
        bbox,
    })
}

/// Abundant base-class crops at IoUs uniform in [0.5, 1].
pub fn build_base_dataset<R: Rng + ?Sized>(
    cfg: &WorldConfig,
    classes: &[ClassSpec],
    rng: &mut R,
) -> Result<Vec<CropSample>> {
    let mut out = Vec::with_capacity(classes.len() * cfg.samples_per_base_class);
    for class in classes {
        for _ in 0..cfg.samples_per_base_class {
            let s = rng.random_range(0.5..=1.0);
            out.push(sample_crop_feature(class, s, cfg.gamma, rng)?);
        }
    }
    Ok(out)
}

/// K ground-truth (IoU 1) crops per novel class.
pub fn build_novel_kshot<R: Rng + ?Sized>(
    cfg: &WorldConfig,
    classes: &[ClassSpec],
    rng: &mut R,
) -> Result<Vec<CropSample>> {
    let mut out = Vec::with_capacity(classes.len() * cfg.shots);
    for class in classes {
        for _ in 0..cfg.shots {
            out.push(sample_crop_feature(class, 1.0, cfg.gamma, rng)?);
        }
    }
    Ok(out)
}

/// Classes plus base and novel samples, each from its own seed stream.
pub fn build_world(cfg: &WorldConfig) -> Result<DatasetSplit> {
    let mut split = make_world(cfg)?;
    split.base_samples = build_base_dataset(
        cfg,
        &split.base_classes,
        &mut stream_rng(cfg.seed, Stream::BaseSamples),
    )?;
    split.novel_samples = build_novel_kshot(
        cfg,
        &split.novel_classes,
        &mut stream_rng(cfg.seed, Stream::NovelShots),
    )?;
    split.validate()?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> WorldConfig {
        WorldConfig {
            base_classes: 3,
            novel_classes: 2,
            samples_per_base_class: 10,
            shots: 2,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_classes() {
        let cfg = small_cfg();
        let a = make_world(&cfg).unwrap();
        let b = make_world(&cfg).unwrap();
        assert_eq!(a, b);
        let c = make_world(&WorldConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.base_classes[0].semantic, c.base_classes[0].semantic);
    }

    #[test]
    fn single_class_world() {
        let cfg = WorldConfig {
            base_classes: 1,
            novel_classes: 0,
            ..Default::default()
        };
        let w = make_world(&cfg).unwrap();
        assert_eq!(w.base_classes.len(), 1);
        assert!((norm(&w.base_classes[0].semantic) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn semantics_are_spread_and_bases_orthonormal() {
        let w = make_world(&WorldConfig::default()).unwrap();
        let classes: Vec<_> = w.classes().collect();
        assert_eq!(classes.len(), 25);
        let mut pairs = 0;
        for i in 0..classes.len() {
            for j in i + 1..classes.len() {
                assert!(dot(&classes[i].semantic, &classes[j].semantic).abs() < 0.95);
                pairs += 1;
            }
        }
        assert_eq!(pairs, 300);
        for c in classes {
            let b = &c.crop_basis;
            for p in 0..b.cols() {
                for q in 0..b.cols() {
                    let g: f64 = (0..b.rows()).map(|r| b[(r, p)] * b[(r, q)]).sum();
                    let want = if p == q { 1.0 } else { 0.0 };
                    assert!((g - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn clean_noiseless_crop_is_the_prototype() {
        let cfg = WorldConfig {
            noise_sigma: 0.0,
            ..small_cfg()
        };
        let w = make_world(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_crop_feature(&w.base_classes[0], 1.0, cfg.gamma, &mut rng).unwrap();
        assert_eq!(s.feature, w.base_classes[0].prototype);
        assert_eq!(s.iou, 1.0);
    }

    #[test]
    fn noiseless_drift_length_is_gamma_times_gap() {
        let cfg = WorldConfig {
            noise_sigma: 0.0,
            ..small_cfg()
        };
        let w = make_world(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &t in &[0.5, 0.6, 0.8, 0.95] {
            let class = &w.base_classes[1];
            let s = sample_crop_feature(class, t, cfg.gamma, &mut rng).unwrap();
            assert!((s.iou - t).abs() <= IOU_MATCH_TOLERANCE);
            let d2 = class.distance_to_prototype(&s.feature).powi(2);
            let want = (cfg.gamma * (1.0 - s.iou)).powi(2);
            assert!((d2 - want).abs() < 1e-12 * (1.0 + want));
        }
    }

    #[test]
    fn drift_turns_from_truncation_to_context() {
        let cfg = WorldConfig {
            noise_sigma: 0.0,
            ..small_cfg()
        };
        let w = make_world(&cfg).unwrap();
        let class = &w.novel_classes[0];
        let t = cfg.crop_rank.div_ceil(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &target in &[0.5, 0.75, 0.95] {
            let s = sample_crop_feature(class, target, cfg.gamma, &mut rng).unwrap();
            let delta: Vec<f64> = s
                .feature
                .iter()
                .zip(&class.prototype)
                .map(|(f, p)| f - p)
                .collect();
            let coords: Vec<f64> = (0..cfg.crop_rank)
                .map(|j| {
                    (0..cfg.feature_dim)
                        .map(|i| class.crop_basis.row(i)[j] * delta[i])
                        .sum()
                })
                .collect();
            let theta = std::f64::consts::PI * (1.0 - s.iou);
            let drift = cfg.gamma * (1.0 - s.iou);
            let (trunc, ctx) = coords.split_at(t);
            assert!((norm(trunc) - drift * theta.cos().abs()).abs() < 1e-12);
            assert!((norm(ctx) - drift * theta.sin()).abs() < 1e-12);
            assert!(ctx.iter().all(|c| *c >= -1e-15));
            assert!(trunc.iter().all(|c| c * theta.cos() >= -1e-15));
        }
    }

    #[test]
    fn lower_iou_is_farther_from_prototype() {
        let cfg = WorldConfig {
            gamma: 2.0,
            noise_sigma: 0.1,
            ..small_cfg()
        };
        let w = make_world(&cfg).unwrap();
        let class = &w.base_classes[0];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mean = |s: f64, rng: &mut ChaCha8Rng| {
            (0..1000)
                .map(|_| {
                    class.distance_to_prototype(
                        &sample_crop_feature(class, s, cfg.gamma, rng)
                            .unwrap()
                            .feature,
                    )
                })
                .sum::<f64>()
                / 1000.0
        };
        let far = mean(0.5, &mut rng);
        let near = mean(0.9, &mut rng);
        assert!(far > near, "{far} vs {near}");
    }

    #[test]
    fn dataset_counts_and_ranges() {
        let cfg = WorldConfig {
            shots: 1,
            ..WorldConfig::default()
        };
        let w = build_world(&cfg).unwrap();
        assert_eq!(w.novel_samples.len(), 5);
        assert_eq!(w.base_samples.len(), 4000);
        assert!(w.base_samples.iter().all(|s| (0.5..=1.0).contains(&s.iou)));
        assert!(w.novel_samples.iter().all(|s| s.iou == 1.0));
    }

    #[test]
    fn validation_catches_overlap() {
        let mut w = build_world(&small_cfg()).unwrap();
        w.novel_classes[0].class_id = 0;
        assert!(w.validate().is_err());
        let mut w = build_world(&small_cfg()).unwrap();
        w.novel_samples.pop();
        assert!(w.validate().is_err());
    }

    #[test]
    fn config_errors() {
        assert!(make_world(&WorldConfig {
            gamma: 0.0,
            ..small_cfg()
        })
        .is_err());
        assert!(make_world(&WorldConfig {
            crop_rank: 100,
            ..small_cfg()
        })
        .is_err());
        assert!(make_world(&WorldConfig {
            crop_rank: 1,
            ..small_cfg()
        })
        .is_err());
        assert!(make_world_with_semantics(&small_cfg(), vec![vec![1.0; 16]; 5]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = make_world(&small_cfg()).unwrap();
        assert!(sample_crop_feature(&w.base_classes[0], 0.3, 2.0, &mut rng).is_err());
    }
}
