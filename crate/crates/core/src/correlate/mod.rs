//! Rank correlations between metric values and model quality across
//! model collections.

pub mod manifest;
pub mod rank;
pub mod tasks;

pub use manifest::{AxisValue, ModelManifest, ModelRecord, METRIC_PREFIX};
pub use rank::{average_ranks, kendall_tau, spearman};
pub use tasks::{
    best_selection_rate, correlate_global, correlate_optimal, correlate_records, correlate_slices, correlate_trajectory, optimal_subset,
    paired_values, percentile_summary, series_by_axis, simpson_check, CorrelationResult, GroupRho, GroupedCorrelations, Method, OptimumRule, Scope,
    SelectionRate, SignConvention, SimpsonReport, SummaryRow, Target, SIMPSON_THRESHOLD,
};
