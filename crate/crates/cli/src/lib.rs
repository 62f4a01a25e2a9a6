//! Command implementations behind the `cropdiv` binary.

pub mod config;
pub mod gradcheck;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cropdiv::evalharness::{
    export_report, run_comparison, subset_experiment, Comparison, Generators, ReportFormat,
    SourceTag,
};
use cropdiv::normvae::{
    default_beta_schedule, generate, generate_from_prior, load_checkpoint, save_checkpoint,
    save_generated, train, GeneratedRecord, GenerationRequest, Mode, TrainReport, VaeParams,
};
use cropdiv::synthworld::{build_world, load_dataset, save_dataset, DatasetSplit};
use cropdiv::{atomic_write, ErrorKind};

pub use config::{Paths, RunConfig};
pub use gradcheck::CheckOutcome;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] cropdiv::Error),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 for configuration errors, 3 for data errors, 4 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            },
            CliError::GradCheck(_) => 4,
        }
    }
}

/// Eval parallelism from `CROPDIV_THREADS` (default 1).
pub fn threads_from_env() -> CliResult<usize> {
    match std::env::var("CROPDIV_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(cropdiv::Error::Config(format!(
                "CROPDIV_THREADS must be a positive integer, got {v:?}"
            ))
            .into()),
        },
    }
}

fn require_file(path: &Path) -> cropdiv::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(cropdiv::Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        })
    }
}

fn ensure_parent(path: &Path) -> cropdiv::Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| cropdiv::Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })
        }
        _ => Ok(()),
    }
}

fn load_split(cfg: &RunConfig) -> cropdiv::Result<DatasetSplit> {
    let path = cfg.paths.dataset();
    require_file(&path)?;
    let split = load_dataset(&path)?;
    if split.feature_dim() != cfg.vae.feature_dim || split.semantic_dim() != cfg.vae.semantic_dim {
        return Err(cropdiv::Error::Config(format!(
            "dataset {} has D={} S={}, config expects D={} S={}",
            path.display(),
            split.feature_dim(),
            split.semantic_dim(),
            cfg.vae.feature_dim,
            cfg.vae.semantic_dim
        )));
    }
    Ok(split)
}

/// Builds the world and writes it to `out` (default `paths.dataset`).
pub fn cmd_world(cfg: &RunConfig, out: Option<&Path>) -> CliResult<PathBuf> {
    let path = out.map_or_else(|| cfg.paths.dataset(), Path::to_path_buf);
    ensure_parent(&path)?;
    let split = build_world(&cfg.world)?;
    save_dataset(&split, &path)?;
    Ok(path)
}

/// `<checkpoint>.loss.csv`.
pub fn loss_curve_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".loss.csv");
    checkpoint.with_file_name(name)
}

pub fn loss_curve_csv(report: &TrainReport) -> String {
    let mut out = String::from("epoch,loss,kl,recon,min_batch_kl\n");
    for i in 0..report.epoch_loss.len() {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e}",
            i + 1,
            report.epoch_loss[i],
            report.epoch_kl[i],
            report.epoch_recon[i],
            report.epoch_min_kl[i]
        );
    }
    out
}

/// Trains a VAE on the base classes of the saved dataset. Writes the
/// checkpoint (default `paths.<mode>_checkpoint`) and its loss curve.
pub fn cmd_train(
    cfg: &RunConfig,
    mode: Mode,
    out: Option<&Path>,
) -> CliResult<(PathBuf, TrainReport)> {
    let split = load_split(cfg)?;
    let path = out.map_or_else(|| cfg.paths.checkpoint(mode), Path::to_path_buf);
    ensure_parent(&path)?;
    let init = VaeParams::init(&cfg.vae_config(mode), cfg.train_seed)?;
    let (params, report) = train(
        init,
        &split.base_samples,
        &split.semantics(),
        cfg.train_seed,
    )?;
    save_checkpoint(&params, &path)?;
    atomic_write(&loss_curve_path(&path), loss_curve_csv(&report).as_bytes())?;
    Ok((path, report))
}

#[derive(Clone, Debug, Default)]
pub struct GenerateArgs {
    pub checkpoint: Option<PathBuf>,
    /// Picks the default checkpoint when `checkpoint` is unset.
    pub mode: Option<Mode>,
    /// A single class; all novel classes when unset.
    pub class_id: Option<u32>,
    pub k: Option<usize>,
    /// Explicit latent norms, norm checkpoints only.
    pub schedule: Option<Vec<f64>>,
}

/// Writes generated features for the selected classes as a `CDIVGFv1` file.
pub fn cmd_generate(
    cfg: &RunConfig,
    args: &GenerateArgs,
    out: Option<&Path>,
) -> CliResult<(PathBuf, usize)> {
    let ckpt = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.paths.checkpoint(args.mode.unwrap_or(Mode::Norm)));
    require_file(&ckpt)?;
    let split = load_split(cfg)?;
    let params = load_checkpoint(&ckpt)?;
    if let Some(m) = args.mode {
        if m != params.mode() {
            return Err(cropdiv::Error::Config(format!(
                "--mode {} but {} is a {} checkpoint",
                m.as_str(),
                ckpt.display(),
                params.mode().as_str()
            ))
            .into());
        }
    }
    let classes: Vec<_> = match args.class_id {
        Some(id) => vec![split
            .class(id)
            .ok_or_else(|| cropdiv::Error::Config(format!("class {id} is not in the dataset")))?],
        None => split.novel_classes.iter().collect(),
    };
    let k = args.k.unwrap_or(cfg.experiment.generated_per_class);
    if k == 0 {
        return Err(cropdiv::Error::Config("--k must be positive".into()).into());
    }
    let schedule = match (&args.schedule, params.mode()) {
        (Some(_), Mode::Vanilla) => {
            return Err(cropdiv::Error::Config(
                "a vanilla checkpoint samples the prior; --schedule needs a norm checkpoint".into(),
            )
            .into())
        }
        (Some(s), Mode::Norm) => s.clone(),
        (None, _) => default_beta_schedule(&params.gmap, k),
    };
    let path = out.map_or_else(|| cfg.paths.generated(), Path::to_path_buf);
    ensure_parent(&path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train_seed);
    let mut records = Vec::new();
    for class in classes {
        let generated = match params.mode() {
            Mode::Vanilla => generate_from_prior(&params, &class.semantic, k, &mut rng)?,
            Mode::Norm => generate(
                &params,
                &GenerationRequest {
                    semantic: class.semantic.clone(),
                    count: k,
                    beta_schedule: schedule.clone(),
                },
                &mut rng,
            )?,
        };
        records.extend(
            generated
                .into_iter()
                .map(|g| GeneratedRecord::new(class.class_id, g, &params.gmap)),
        );
    }
    save_generated(&records, &path)?;
    Ok((path, records.len()))
}

/// `report.csv` → `report_subset.csv`.
pub fn subset_sibling(report: &Path) -> PathBuf {
    let stem = report.file_stem().unwrap_or_default().to_string_lossy();
    let name = match report.extension() {
        Some(ext) => format!("{stem}_subset.{}", ext.to_string_lossy()),
        None => format!("{stem}_subset"),
    };
    report.with_file_name(name)
}

pub struct EvalOutput {
    pub report: PathBuf,
    pub subset_report: PathBuf,
    pub comparison: Comparison,
    pub subsets: Comparison,
}

/// Runs the source comparison and the subset experiment and writes both
/// reports. `out` replaces the main report path; the subset report then sits
/// next to it.
pub fn cmd_eval(cfg: &RunConfig, threads: usize, out: Option<&Path>) -> CliResult<EvalOutput> {
    let (report, subset_report) = match out {
        Some(p) => (p.to_path_buf(), subset_sibling(p)),
        None => (cfg.paths.report(), cfg.paths.subset_report()),
    };
    let formats = (
        ReportFormat::from_path(&report)?,
        ReportFormat::from_path(&subset_report)?,
    );
    let dataset = cfg.paths.dataset();
    require_file(&dataset)?;
    let need_vanilla = cfg.sources.contains(&SourceTag::VanillaVae);
    let vanilla_path = cfg.paths.checkpoint(Mode::Vanilla);
    let norm_path = cfg.paths.checkpoint(Mode::Norm);
    if need_vanilla {
        require_file(&vanilla_path)?;
    }
    require_file(&norm_path)?;

    let split = load_split(cfg)?;
    let vanilla = need_vanilla
        .then(|| load_checkpoint(&vanilla_path))
        .transpose()?;
    let norm = load_checkpoint(&norm_path)?;
    let generators = Generators {
        vanilla: vanilla.as_ref(),
        norm: Some(&norm),
    };
    let comparison = run_comparison(
        &split,
        &cfg.world,
        &generators,
        &cfg.sources,
        &cfg.eval_seeds,
        &cfg.experiment,
        threads,
    )?;
    let subsets = subset_experiment(
        &split,
        &cfg.world,
        &norm,
        &cfg.eval_seeds,
        &cfg.experiment,
        threads,
    )?;
    for p in [&report, &subset_report] {
        ensure_parent(p)?;
    }
    export_report(&comparison, &report, formats.0)?;
    export_report(&subsets, &subset_report, formats.1)?;
    Ok(EvalOutput {
        report,
        subset_report,
        comparison,
        subsets,
    })
}

/// Runs the gradient-check suite.
pub fn cmd_gradcheck(cfg: &RunConfig) -> CliResult<Vec<CheckOutcome>> {
    Ok(gradcheck::run_suite(
        cfg.train_seed,
        cfg.gradcheck_instances,
        &cfg.vae,
    )?)
}

/// Any check above tolerance is an error.
pub fn gradcheck_verdict(outcomes: &[CheckOutcome]) -> CliResult<()> {
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.passed())
        .map(|o| format!("{} (max relative error {:.3e})", o.name, o.max_rel_error))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheck(failed.join(", ")))
    }
}

/// World, both VAEs, then the evaluation battery, all under the configured
/// paths (`out` replaces `paths.out_dir`).
pub fn cmd_pipeline(cfg: &RunConfig, threads: usize, out: Option<&Path>) -> CliResult<EvalOutput> {
    let mut cfg = cfg.clone();
    if let Some(dir) = out {
        cfg.paths = Paths {
            out_dir: dir.to_path_buf(),
            ..Paths::default()
        };
    }
    std::fs::create_dir_all(&cfg.paths.out_dir).map_err(|e| cropdiv::Error::Io {
        path: cfg.paths.out_dir.clone(),
        source: e,
    })?;
    let dataset = cmd_world(&cfg, None)?;
    log(&format!("world written to {}", dataset.display()));
    for mode in [Mode::Vanilla, Mode::Norm] {
        let (path, report) = cmd_train(&cfg, mode, None)?;
        log(&format!(
            "{} VAE trained: final loss {:.4}, written to {}",
            mode.as_str(),
            report.epoch_loss.last().copied().unwrap_or(f64::NAN),
            path.display()
        ));
    }
    cmd_eval(&cfg, threads, None)
}

pub fn log(msg: &str) {
    eprintln!("[cropdiv] {msg}");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(
            CliError::from(cropdiv::Error::Config("x".into())).exit_code(),
            2
        );
        let io = cropdiv::Error::Io {
            path: "p".into(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "gone"),
        };
        assert_eq!(CliError::from(io).exit_code(), 3);
        assert_eq!(
            CliError::from(cropdiv::Error::NonFiniteGradient { index: 0 }).exit_code(),
            4
        );
        assert_eq!(CliError::GradCheck("x".into()).exit_code(), 4);
    }

    #[test]
    fn derived_paths() {
        assert_eq!(
            loss_curve_path(Path::new("a/norm.ckpt")),
            PathBuf::from("a/norm.ckpt.loss.csv")
        );
        assert_eq!(
            subset_sibling(Path::new("a/r.json")),
            PathBuf::from("a/r_subset.json")
        );
        assert_eq!(subset_sibling(Path::new("r")), PathBuf::from("r_subset"));
    }
}
