use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normvae::{
    default_beta_schedule, generate, generate_from_prior, GenerationRequest, Mode, VaeParams,
};
use crate::synthworld::ClassSpec;

/// Fraction of the β schedule kept by the subset sources.
pub const SUBSET_FRACTION: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    /// Real shots only.
    None,
    /// Prior samples from a plain conditional VAE.
    VanillaVae,
    /// Norm-controlled samples over the full β schedule.
    NormVae,
    /// Norm-controlled samples at the largest β values (hard crops).
    LowIouSubset,
    /// Norm-controlled samples at the smallest β values (easy crops).
    HighIouSubset,
}

impl SourceTag {
    pub const ALL: [SourceTag; 5] = [
        SourceTag::None,
        SourceTag::VanillaVae,
        SourceTag::NormVae,
        SourceTag::LowIouSubset,
        SourceTag::HighIouSubset,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::None => "none",
            SourceTag::VanillaVae => "vanilla_vae",
            SourceTag::NormVae => "norm_vae",
            SourceTag::LowIouSubset => "low_iou_subset",
            SourceTag::HighIouSubset => "high_iou_subset",
        }
    }

    /// The generator mode this source needs, if any.
    pub fn required_mode(self) -> Option<Mode> {
        match self {
            SourceTag::None => None,
            SourceTag::VanillaVae => Some(Mode::Vanilla),
            SourceTag::NormVae | SourceTag::LowIouSubset | SourceTag::HighIouSubset => {
                Some(Mode::Norm)
            }
        }
    }

    pub(crate) fn stream_id(self) -> u64 {
        match self {
            SourceTag::None => 0,
            SourceTag::VanillaVae => 1,
            SourceTag::NormVae => 2,
            SourceTag::LowIouSubset => 3,
            SourceTag::HighIouSubset => 4,
        }
    }
}

impl std::fmt::Display for SourceTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SourceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SourceTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown augmentation source {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFeature {
    pub class_id: u32,
    pub feature: Vec<f64>,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationSource {
    pub tag: SourceTag,
    pub generated: Vec<LabeledFeature>,
}

impl AugmentationSource {
    pub fn none() -> Self {
        Self {
            tag: SourceTag::None,
            generated: Vec::new(),
        }
    }
}

/// Trained generators available to an experiment.
#[derive(Clone, Copy, Debug, Default)]
pub struct Generators<'a> {
    pub vanilla: Option<&'a VaeParams>,
    pub norm: Option<&'a VaeParams>,
}

impl<'a> Generators<'a> {
    pub fn for_tag(&self, tag: SourceTag) -> Result<Option<&'a VaeParams>> {
        let Some(mode) = tag.required_mode() else {
            return Ok(None);
        };
        let params = match mode {
            Mode::Vanilla => self.vanilla,
            Mode::Norm => self.norm,
        }
        .ok_or_else(|| {
            Error::Config(format!("source {tag} needs a {} checkpoint", mode.as_str()))
        })?;
        if params.mode() != mode {
            return Err(Error::Config(format!(
                "source {tag} needs a {} checkpoint but was given a {} one",
                mode.as_str(),
                params.mode().as_str()
            )));
        }
        Ok(Some(params))
    }
}

/// Number of schedule entries each subset keeps: ⌈0.3·k⌉.
pub fn subset_size(k: usize) -> usize {
    (SUBSET_FRACTION * k as f64 - 1e-9).ceil() as usize
}

/// The β values a source decodes for one class, given the full schedule of
/// length `k`. Subsets keep the ⌈0.3k⌉ largest (low IoU) or smallest (high
/// IoU) entries.
pub fn source_betas(tag: SourceTag, schedule: &[f64]) -> Vec<f64> {
    let mut sorted = schedule.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let m = subset_size(schedule.len());
    match tag {
        SourceTag::LowIouSubset => sorted[..m].to_vec(),
        SourceTag::HighIouSubset => sorted[sorted.len() - m..].to_vec(),
        _ => schedule.to_vec(),
    }
}

/// Generates `k` features per class for `tag` (subsets produce ⌈0.3k⌉).
pub fn build_source<R: Rng + ?Sized>(
    tag: SourceTag,
    generators: &Generators<'_>,
    classes: &[ClassSpec],
    k: usize,
    rng: &mut R,
) -> Result<AugmentationSource> {
    let Some(params) = generators.for_tag(tag)? else {
        return Ok(AugmentationSource::none());
    };
    let mut generated = Vec::new();
    if k > 0 {
        let schedule = default_beta_schedule(&params.gmap, k);
        let betas = source_betas(tag, &schedule);
        for class in classes {
            let out = match tag {
                SourceTag::VanillaVae => generate_from_prior(params, &class.semantic, k, rng)?,
                _ => generate(
                    params,
                    &GenerationRequest {
                        semantic: class.semantic.clone(),
                        count: betas.len(),
                        beta_schedule: betas.clone(),
                    },
                    rng,
                )?,
            };
            generated.extend(out.into_iter().map(|g| LabeledFeature {
                class_id: class.class_id,
                feature: g.feature,
                beta: g.beta,
            }));
        }
    }
    Ok(AugmentationSource { tag, generated })
}
