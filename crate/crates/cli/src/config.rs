use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cropdiv::evalharness::{ExperimentConfig, SourceTag};
use cropdiv::normvae::{Mode, VaeConfig};
use cropdiv::synthworld::WorldConfig;
use cropdiv::{Error, Result};

/// Output locations. Unset entries default to fixed names under `out_dir`.
/// Relative paths are resolved against the directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub out_dir: PathBuf,
    pub dataset: Option<PathBuf>,
    pub vanilla_checkpoint: Option<PathBuf>,
    pub norm_checkpoint: Option<PathBuf>,
    pub generated: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub subset_report: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            dataset: None,
            vanilla_checkpoint: None,
            norm_checkpoint: None,
            generated: None,
            report: None,
            subset_report: None,
        }
    }
}

impl Paths {
    fn or_default(&self, p: &Option<PathBuf>, name: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.out_dir.join(name))
    }

    pub fn dataset(&self) -> PathBuf {
        self.or_default(&self.dataset, "dataset.bin")
    }

    pub fn checkpoint(&self, mode: Mode) -> PathBuf {
        match mode {
            Mode::Vanilla => self.or_default(&self.vanilla_checkpoint, "vanilla.ckpt"),
            Mode::Norm => self.or_default(&self.norm_checkpoint, "norm.ckpt"),
        }
    }

    pub fn generated(&self) -> PathBuf {
        self.or_default(&self.generated, "generated.bin")
    }

    pub fn report(&self) -> PathBuf {
        self.or_default(&self.report, "report.csv")
    }

    pub fn subset_report(&self) -> PathBuf {
        self.or_default(&self.subset_report, "subset_report.csv")
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        for p in [
            &mut self.dataset,
            &mut self.vanilla_checkpoint,
            &mut self.norm_checkpoint,
            &mut self.generated,
            &mut self.report,
            &mut self.subset_report,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }
}

/// Everything one run needs, read from a single JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub world: WorldConfig,
    /// The `mode` field is ignored; commands choose the mode.
    pub vae: VaeConfig,
    pub experiment: ExperimentConfig,
    /// Seeds VAE initialisation, mini-batch order and `generate`.
    pub train_seed: u64,
    pub eval_seeds: Vec<u64>,
    /// Sources compared by `eval`; the subset experiment always runs too.
    pub sources: Vec<SourceTag>,
    /// Random instances per gradient check.
    pub gradcheck_instances: usize,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            vae: VaeConfig::default(),
            experiment: ExperimentConfig::default(),
            train_seed: 0,
            eval_seeds: (0..5).collect(),
            sources: vec![SourceTag::None, SourceTag::VanillaVae, SourceTag::NormVae],
            gradcheck_instances: 20,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and validates a config file, resolving relative paths against
    /// its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&bytes)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.resolve(base);
        if let Some(p) = &mut cfg.world.semantic_file {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.vae.validate()?;
        self.experiment.validate()?;
        if self.vae.feature_dim != self.world.feature_dim
            || self.vae.semantic_dim != self.world.semantic_dim
        {
            return Err(Error::Config(format!(
                "vae dims (D={}, S={}) do not match world dims (D={}, S={})",
                self.vae.feature_dim,
                self.vae.semantic_dim,
                self.world.feature_dim,
                self.world.semantic_dim
            )));
        }
        if self.eval_seeds.is_empty() {
            return Err(Error::Config("eval_seeds is empty".into()));
        }
        if self.sources.is_empty() {
            return Err(Error::Config("sources is empty".into()));
        }
        if self.sources.iter().collect::<BTreeSet<_>>().len() != self.sources.len() {
            return Err(Error::Config("sources contains duplicates".into()));
        }
        if self.gradcheck_instances == 0 {
            return Err(Error::Config("gradcheck_instances must be positive".into()));
        }
        if let Some(p) = &self.world.semantic_file {
            if !p.is_file() {
                return Err(Error::Io {
                    path: p.clone(),
                    source: std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        "semantic file not found",
                    ),
                });
            }
        }
        Ok(())
    }

    /// Replaces every seed: world, training, and the eval seeds, which become
    /// `seed, seed + 1, …` with the same count.
    pub fn override_seed(&mut self, seed: u64) {
        self.world.seed = seed;
        self.train_seed = seed;
        let n = self.eval_seeds.len() as u64;
        self.eval_seeds = (0..n).map(|i| seed.wrapping_add(i)).collect();
    }

    pub fn vae_config(&self, mode: Mode) -> VaeConfig {
        VaeConfig {
            mode,
            ..self.vae.clone()
        }
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
