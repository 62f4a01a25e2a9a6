//! Few-shot classifier on novel-class features and the experiments that
//! measure how its accuracy degrades as crop IoU falls, with and without
//! generated features.

mod classifier;
mod experiment;
mod report;
mod source;


pub use classifier::{cross_entropy, train_classifier, ClassifierConfig, ClassifierParams};
pub use experiment::{
    build_eval_set, eval_robustness, iou_grid, run_comparison, score_eval_set, subset_experiment,
    AggregateResult, Comparison, EvalSet, ExperimentConfig, ExperimentSummary, RobustnessReport,
    SourceResult, HARD_EASY_SPLIT,
};
pub use report::{
    decode_csv, decode_json, encode_csv, encode_json, export_report, load_report, report_rows,
    ReportFormat, ReportRow, REPORT_COLUMNS,
};
pub use source::{
    build_source, source_betas, subset_size, AugmentationSource, Generators, LabeledFeature,
    SourceTag, SUBSET_FRACTION,
};
