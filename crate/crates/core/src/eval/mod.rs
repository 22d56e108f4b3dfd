//! Metrics, fold aggregation and stratified nested cross-validation.

mod cv;
mod metrics;
mod report;

pub use cv::{
    binary_metrics, fit_features, fit_pipeline, nested_cv, nested_cv_with_folds, select_and_fit, CvResult,
    FeatureSpec, Featurizer, FittedPipeline, OuterFold, PipelineConfig, Scorer, TuneScope,
};
pub use metrics::{auprc, auroc, mse, threshold_metrics, MetricSet, ThresholdMetrics};
pub use report::{EvalReport, FoldRecord, GroupSummary, ReportSummary, RunMeta, Summary};
