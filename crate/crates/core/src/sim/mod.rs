//! Synthetic data, evaluation statistics and the repeated-split experiment
//! runner.

mod experiment;
mod generate;
mod stats;

pub use experiment::{
    run_experiment, Aggregate, CertificateSummary, EvalReport, ExperimentConfig, FunctionClassSpec, MeanStd, RecallBin,
    RepetitionRecord, SplitPlan, TaskKind,
};
pub use generate::{
    regression_mean, synth_regression_generate, synth_segmentation_generate, synth_segmentation_with, RegressionData,
    SegmentationData, SegmentationParams,
};
pub use stats::{average_ranks, group_risks, spearman, tilted_risk, GroupRisk, Spearman};
