//! Metrics and experiment harnesses.

mod bench;
mod harness;
mod metrics;
mod predict;
mod report;

pub use bench::{loglog_slope, scaling_benchmark, BenchConfig, BenchReport, BenchRow, TIMER};
pub use harness::{
    ablation_suite, median, oracle_provider, run_cell, training_ratio_sweep, AblationReport,
    AblationRow, AblationSummary, CellContext, CellResult, Experiment, SweepReport, SweepRow,
    SweepSummary, TeacherProvider, Variant,
};
pub use metrics::{
    compute_metrics, horizon_breakdown, quartile_edges, roughness_metrics, volume_bucket_breakdown,
    BucketMetrics, Metrics, Roughness,
};
pub use predict::{predict_windows, WindowPredictions};
pub use report::{Environment, Report};
