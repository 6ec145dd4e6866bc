//! Exact-token judging, metrics, stability analyses and report emission.

mod metrics;
mod report;
mod sweep;

pub use metrics::{
    clean_accuracy, cohen_kappa, counts_by_condition, hallucination_rate, judge, map_overlap, split_half_overlap,
    top_k_overlap, JudgedOutcome, OverlapResult, Verdict, VerdictCounts,
};
pub use report::{
    emit_report, ConditionResult, MaciSummary, PlotRow, ProbeSummary, Report, ReportFormat, REPORT_FORMAT_VERSION,
};
pub use sweep::{evaluate_condition, judge_condition, probe_dataset, sensitivity_sweep, SweepInputs};
