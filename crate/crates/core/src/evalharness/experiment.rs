use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifier::{argmax, train_classifier, ClassifierConfig, ClassifierParams};
use super::source::{build_source, Generators, SourceTag};
use crate::error::{Error, Result};
use crate::nnkit::Matrix;
use crate::synthworld::{
    build_novel_kshot, sample_crop_feature, ClassSpec, CropSample, DatasetSplit, WorldConfig,
};

/// Hard crops have IoU below this; easy crops at or above.
pub const HARD_EASY_SPLIT: f64 = 0.75;

#[derive(Clone, Copy)]
enum EvalStream {
    Shots = 16,
    Classifier = 17,
    Eval = 18,
    Generation = 32,
}

fn eval_rng(seed: u64, stream: EvalStream, sub: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64 + sub);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Number of grid points from IoU 1.0 down to 0.5.
    pub grid_bins: usize,
    pub samples_per_bin: usize,
    /// Generated features per novel class (k).
    pub generated_per_class: usize,
    pub classifier: ClassifierConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grid_bins: 11,
            samples_per_bin: 500,
            generated_per_class: 30,
            classifier: ClassifierConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_bins < 2 {
            return Err(Error::Config("grid_bins must be at least 2".into()));
        }
        if self.samples_per_bin == 0 {
            return Err(Error::Config("samples_per_bin must be positive".into()));
        }
        self.classifier.validate()
    }

    pub fn grid(&self) -> Vec<f64> {
        iou_grid(self.grid_bins)
    }
}

/// `bins` IoUs evenly spaced from 1.0 down to 0.5.
pub fn iou_grid(bins: usize) -> Vec<f64> {
    let last = (bins - 1) as f64;
    (0..bins).map(|i| 1.0 - 0.5 * i as f64 / last).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub seed: u64,
    /// Strictly decreasing IoUs.
    pub grid: Vec<f64>,
    pub accuracy: Vec<f64>,
    /// Mean probability assigned to the true class.
    pub mean_prob: Vec<f64>,
    pub counts: Vec<usize>,
}

impl RobustnessReport {
    fn pooled(&self, keep: impl Fn(f64) -> bool, values: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0usize);
        for ((g, v), n) in self.grid.iter().zip(values).zip(&self.counts) {
            if keep(*g) {
                num += v * *n as f64;
                den += n;
            }
        }
        if den == 0 {
            f64::NAN
        } else {
            num / den as f64
        }
    }

    /// Accuracy pooled over grid IoUs in [0.5, 0.75).
    pub fn hard_accuracy(&self) -> f64 {
        self.pooled(|g| g < HARD_EASY_SPLIT, &self.accuracy)
    }

    /// Accuracy pooled over grid IoUs in [0.75, 1].
    pub fn easy_accuracy(&self) -> f64 {
        self.pooled(|g| g >= HARD_EASY_SPLIT, &self.accuracy)
    }

    pub fn hard_prob(&self) -> f64 {
        self.pooled(|g| g < HARD_EASY_SPLIT, &self.mean_prob)
    }

    pub fn easy_prob(&self) -> f64 {
        self.pooled(|g| g >= HARD_EASY_SPLIT, &self.mean_prob)
    }

    /// Accuracy at the first grid point minus the last (IoU 1.0 minus 0.5).
    pub fn accuracy_drop(&self) -> f64 {
        self.accuracy[0] - self.accuracy[self.accuracy.len() - 1]
    }

    pub fn prob_drop(&self) -> f64 {
        self.mean_prob[0] - self.mean_prob[self.mean_prob.len() - 1]
    }
}

/// Crops at each grid IoU, cycling through the classes.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub grid: Vec<f64>,
    pub bins: Vec<Vec<CropSample>>,
}

pub fn build_eval_set(
    classes: &[ClassSpec],
    grid: &[f64],
    per_bin: usize,
    gamma: f64,
    seed: u64,
) -> Result<EvalSet> {
    if classes.is_empty() {
        return Err(Error::Config("evaluation needs at least one class".into()));
    }
    if let Some(g) = grid.iter().find(|g| !(0.5..=1.0).contains(*g)) {
        return Err(Error::IouDomain(*g));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("IoU grid must be strictly decreasing".into()));
    }
    let mut rng = eval_rng(seed, EvalStream::Eval, 0);
    let bins = grid
        .iter()
        .map(|&iou| {
            (0..per_bin)
                .map(|i| sample_crop_feature(&classes[i % classes.len()], iou, gamma, &mut rng))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(EvalSet {
        grid: grid.to_vec(),
        bins,
    })
}

pub fn score_eval_set(
    params: &ClassifierParams,
    set: &EvalSet,
    seed: u64,
) -> Result<RobustnessReport> {
    let dim = params.feature_dim();
    let mut report = RobustnessReport {
        seed,
        grid: set.grid.clone(),
        accuracy: Vec::with_capacity(set.grid.len()),
        mean_prob: Vec::with_capacity(set.grid.len()),
        counts: Vec::with_capacity(set.grid.len()),
    };
    for bin in &set.bins {
        let x = Matrix::new(
            bin.len(),
            dim,
            bin.iter().flat_map(|s| s.feature.iter().copied()).collect(),
        )?;
        let probs = params.predict_proba_batch(&x)?;
        let (mut correct, mut prob_sum) = (0usize, 0.0);
        for (r, s) in bin.iter().enumerate() {
            let l = params
                .class_ids
                .iter()
                .position(|c| *c == s.class_id)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "evaluation class {} is not being classified",
                        s.class_id
                    ))
                })?;
            let p = probs.row(r);
            if argmax(p) == l {
                correct += 1;
            }
            prob_sum += p[l];
        }
        let n = bin.len().max(1) as f64;
        report.accuracy.push(correct as f64 / n);
        report.mean_prob.push(prob_sum / n);
        report.counts.push(bin.len());
    }
    Ok(report)
}

/// Scores `params` on fresh crops of `classes` drawn at each grid IoU.
pub fn eval_robustness(
    params: &ClassifierParams,
    classes: &[ClassSpec],
    grid: &[f64],
    per_bin: usize,
    gamma: f64,
    seed: u64,
) -> Result<RobustnessReport> {
    let set = build_eval_set(classes, grid, per_bin, gamma, seed)?;
    score_eval_set(params, &set, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceResult {
    pub source: SourceTag,
    pub report: RobustnessReport,
    pub accuracy_drop: f64,
    pub prob_drop: f64,
    pub hard_accuracy: f64,
    pub easy_accuracy: f64,
}

impl SourceResult {
    pub fn from_report(source: SourceTag, report: RobustnessReport) -> Self {
        Self {
            source,
            accuracy_drop: report.accuracy_drop(),
            prob_drop: report.prob_drop(),
            hard_accuracy: report.hard_accuracy(),
            easy_accuracy: report.easy_accuracy(),
            report,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub seed: u64,
    /// One entry per source, in the order requested.
    pub results: Vec<SourceResult>,
}

impl ExperimentSummary {
    pub fn result(&self, source: SourceTag) -> Option<&SourceResult> {
        self.results.iter().find(|r| r.source == source)
    }
}

/// Means over seeds for one source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub source: SourceTag,
    pub grid: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub mean_prob: Vec<f64>,
    pub accuracy_drop: f64,
    pub prob_drop: f64,
    pub hard_accuracy: f64,
    pub easy_accuracy: f64,
    pub hard_prob: f64,
    pub easy_prob: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub per_seed: Vec<ExperimentSummary>,
    pub aggregate: Vec<AggregateResult>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    sum / n as f64
}

fn aggregate(sources: &[SourceTag], per_seed: &[ExperimentSummary]) -> Vec<AggregateResult> {
    if per_seed.is_empty() {
        return Vec::new();
    }
    sources
        .iter()
        .enumerate()
        .map(|(i, &source)| {
            let rs: Vec<&SourceResult> = per_seed.iter().map(|s| &s.results[i]).collect();
            let bins = rs[0].report.grid.len();
            AggregateResult {
                source,
                grid: rs[0].report.grid.clone(),
                accuracy: (0..bins)
                    .map(|b| mean(rs.iter().map(|r| r.report.accuracy[b])))
                    .collect(),
                mean_prob: (0..bins)
                    .map(|b| mean(rs.iter().map(|r| r.report.mean_prob[b])))
                    .collect(),
                accuracy_drop: mean(rs.iter().map(|r| r.accuracy_drop)),
                prob_drop: mean(rs.iter().map(|r| r.prob_drop)),
                hard_accuracy: mean(rs.iter().map(|r| r.hard_accuracy)),
                easy_accuracy: mean(rs.iter().map(|r| r.easy_accuracy)),
                hard_prob: mean(rs.iter().map(|r| r.report.hard_prob())),
                easy_prob: mean(rs.iter().map(|r| r.report.easy_prob())),
            }
        })
        .collect()
}

struct SeedInputs {
    shots: Vec<CropSample>,
    eval: EvalSet,
}

fn run_cell(
    world: &DatasetSplit,
    generators: &Generators<'_>,
    cfg: &ExperimentConfig,
    class_ids: &[u32],
    inputs: &SeedInputs,
    source: SourceTag,
    seed: u64,
) -> Result<SourceResult> {
    let mut gen_rng = eval_rng(seed, EvalStream::Generation, source.stream_id());
    let aug = build_source(
        source,
        generators,
        &world.novel_classes,
        cfg.generated_per_class,
        &mut gen_rng,
    )?;
    let classifier_seed = eval_rng(seed, EvalStream::Classifier, 0).random::<u64>();
    let params = train_classifier(
        class_ids,
        &inputs.shots,
        &aug,
        &cfg.classifier,
        classifier_seed,
    )?;
    Ok(SourceResult::from_report(
        source,
        score_eval_set(&params, &inputs.eval, seed)?,
    ))
}

/// Trains and evaluates one classifier per (source, seed) on the novel
/// classes. Every source sees the same K shots and evaluation crops for a
/// given seed. Cells run on a pool of `threads` workers; results do not
/// depend on the thread count.
pub fn run_comparison(
    world: &DatasetSplit,
    world_cfg: &WorldConfig,
    generators: &Generators<'_>,
    sources: &[SourceTag],
    seeds: &[u64],
    cfg: &ExperimentConfig,
    threads: usize,
) -> Result<Comparison> {
    cfg.validate()?;
    world_cfg.validate()?;
    if world.novel_classes.is_empty() {
        return Err(Error::Config("world has no novel classes".into()));
    }
    for &s in sources {
        generators.for_tag(s)?;
    }
    let class_ids: Vec<u32> = world.novel_classes.iter().map(|c| c.class_id).collect();
    let grid = cfg.grid();
    let inputs: Vec<SeedInputs> = seeds
        .iter()
        .map(|&seed| {
            let shots = build_novel_kshot(
                world_cfg,
                &world.novel_classes,
                &mut eval_rng(seed, EvalStream::Shots, 0),
            )?;
            let eval = build_eval_set(
                &world.novel_classes,
                &grid,
                cfg.samples_per_bin,
                world_cfg.gamma,
                seed,
            )?;
            Ok(SeedInputs { shots, eval })
        })
        .collect::<Result<_>>()?;

    let cells: Vec<(usize, SourceTag)> = (0..seeds.len())
        .flat_map(|i| sources.iter().map(move |&s| (i, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<SourceResult>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(i, source)| {
                run_cell(
                    world, generators, cfg, &class_ids, &inputs[i], source, seeds[i],
                )
            })
            .collect()
    });

    let mut results = results.into_iter();
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let rs = results
            .by_ref()
            .take(sources.len())
            .collect::<Result<Vec<_>>>()?;
        per_seed.push(ExperimentSummary { seed, results: rs });
    }
    Ok(Comparison {
        aggregate: aggregate(sources, &per_seed),
        per_seed,
    })
}

/// Low-IoU versus high-IoU subsets of the norm generator's β schedule.
pub fn subset_experiment(
    world: &DatasetSplit,
    world_cfg: &WorldConfig,
    norm: &crate::normvae::VaeParams,
    seeds: &[u64],
    cfg: &ExperimentConfig,
    threads: usize,
) -> Result<Comparison> {
    let generators = Generators {
        vanilla: None,
        norm: Some(norm),
    };
    run_comparison(
        world,
        world_cfg,
        &generators,
        &[SourceTag::LowIouSubset, SourceTag::HighIouSubset],
        seeds,
        cfg,
        threads,
    )
}
