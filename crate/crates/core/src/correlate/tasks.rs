//! Correlation tasks over manifests: global, one-dimensional slices,
//! training trajectories, optimal subsets, best-model selection and
//! grouped sign-reversal checks.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{AxisValue, ModelManifest, ModelRecord};
use super::rank::{kendall_tau, spearman};
use crate::error::{Error, Result};
use crate::metrics::MetricValue;
use crate::numeric::{quantile_sorted, QuantileMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Quality,
    GeneralizationGap,
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quality" => Ok(Target::Quality),
            "gap" | "generalization_gap" => Ok(Target::GeneralizationGap),
            o => Err(Error::InvalidArgument(format!("target must be quality or gap, got {o:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Spearman,
    Kendall,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spearman" => Ok(Method::Spearman),
            "kendall" => Ok(Method::Kendall),
            o => Err(Error::InvalidArgument(format!("method must be spearman or kendall, got {o:?}"))),
        }
    }
}

impl Method {
    pub fn correlate(self, x: &[f64], y: &[f64]) -> Result<Option<f64>> {
        match self {
            Method::Spearman => spearman(x, y),
            Method::Kendall => kendall_tau(x, y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scope {
    Global,
    Slice { axis: String, fixed: BTreeMap<String, AxisValue> },
    Trajectory { run: String },
    OptimalSubset { group_axis: String },
}

impl Scope {
    pub fn kind(&self) -> &'static str {
        match self {
            Scope::Global => "global",
            Scope::Slice { .. } => "slice",
            Scope::Trajectory { .. } => "trajectory",
            Scope::OptimalSubset { .. } => "optimal_subset",
        }
    }
}

/// How the metric enters the correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// Correlated against quality as `-metric`, so a positive rho means
    /// smaller metric values go with better models.
    MetricNegated,
    AsIs,
}

impl SignConvention {
    pub fn for_target(target: Target) -> Self {
        match target {
            Target::Quality => SignConvention::MetricNegated,
            Target::GeneralizationGap => SignConvention::AsIs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub target: Target,
    pub method: Method,
    pub scope: Scope,
    pub metric_name: String,
    pub rho: MetricValue,
    pub n: usize,
    /// Records left out because the metric or target was undefined.
    pub n_dropped: usize,
    pub sign_convention: SignConvention,
}

fn target_value(r: &ModelRecord, target: Target) -> Option<f64> {
    match target {
        Target::Quality => Some(r.quality),
        Target::GeneralizationGap => r.generalization_gap(),
    }
}

/// Paired `(signed metric, target)` values with undefined entries dropped.
pub fn paired_values(records: &[&ModelRecord], metric: &str, target: Target) -> (Vec<f64>, Vec<f64>, usize) {
    let sign = match SignConvention::for_target(target) {
        SignConvention::MetricNegated => -1.0,
        SignConvention::AsIs => 1.0,
    };
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for r in records {
        if let (Some(m), Some(t)) = (r.metric(metric), target_value(r, target)) {
            if m.is_finite() && t.is_finite() {
                x.push(sign * m);
                y.push(t);
            }
        }
    }
    let dropped = records.len() - x.len();
    (x, y, dropped)
}

/// Correlation over an arbitrary record set; `None` when fewer than 2 pairs remain.
pub fn correlate_records(
    records: &[&ModelRecord],
    metric: &str,
    target: Target,
    method: Method,
    scope: Scope,
) -> Result<Option<CorrelationResult>> {
    let (x, y, n_dropped) = paired_values(records, metric, target);
    if x.len() < 2 {
        return Ok(None);
    }
    let rho = match method.correlate(&x, &y)? {
        Some(r) => MetricValue::from(r),
        None => MetricValue::undefined("zero rank variance"),
    };
    Ok(Some(CorrelationResult {
        target,
        method,
        scope,
        metric_name: metric.to_string(),
        rho,
        n: x.len(),
        n_dropped,
        sign_convention: SignConvention::for_target(target),
    }))
}

pub fn correlate_global(manifest: &ModelManifest, metric: &str, target: Target, method: Method) -> Result<Option<CorrelationResult>> {
    let recs: Vec<&ModelRecord> = manifest.records.iter().collect();
    correlate_records(&recs, metric, target, method, Scope::Global)
}

type GroupKey = Vec<(String, AxisValue)>;

/// Groups records by their coordinates on every axis not in `free`.
fn group_by_fixed<'a>(manifest: &'a ModelManifest, free: &[&str]) -> BTreeMap<GroupKey, Vec<&'a ModelRecord>> {
    let mut groups: BTreeMap<GroupKey, Vec<&ModelRecord>> = BTreeMap::new();
    for r in &manifest.records {
        let key: GroupKey = manifest
            .grid_axes
            .iter()
            .filter(|a| !free.contains(&a.as_str()))
            .map(|a| (a.clone(), r.hyperparams[a].clone()))
            .collect();
        groups.entry(key).or_default().push(r);
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedCorrelations {
    pub results: Vec<CorrelationResult>,
    /// Groups with fewer than 2 usable records.
    pub skipped: usize,
    /// Median over groups of the target's range within the group; small
    /// values mark an axis the target barely responds to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_target_range: Option<f64>,
}

fn run_groups(
    groups: BTreeMap<GroupKey, Vec<&ModelRecord>>,
    metric: &str,
    target: Target,
    method: Method,
    scope: impl Fn(&GroupKey) -> Scope + Sync,
) -> Result<GroupedCorrelations> {
    let groups: Vec<(GroupKey, Vec<&ModelRecord>)> = groups.into_iter().collect();
    let out: Vec<Option<CorrelationResult>> = groups
        .par_iter()
        .map(|(key, recs)| correlate_records(recs, metric, target, method, scope(key)))
        .collect::<Result<_>>()?;
    let mut ranges: Vec<f64> = groups
        .iter()
        .filter_map(|(_, recs)| {
            let t: Vec<f64> = recs.iter().filter_map(|r| target_value(r, target)).collect();
            (t.len() >= 2).then(|| t.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - t.iter().cloned().fold(f64::INFINITY, f64::min))
        })
        .collect();
    ranges.sort_by(f64::total_cmp);
    let skipped = out.iter().filter(|r| r.is_none()).count();
    Ok(GroupedCorrelations {
        results: out.into_iter().flatten().collect(),
        skipped,
        median_target_range: quantile_sorted(&ranges, 0.5, QuantileMethod::Linear),
    })
}

/// One correlation per one-dimensional slice along `axis`: records sharing
/// every other coordinate.
pub fn correlate_slices(manifest: &ModelManifest, axis: &str, metric: &str, target: Target, method: Method) -> Result<GroupedCorrelations> {
    manifest.require_axis(axis)?;
    let groups = group_by_fixed(manifest, &[axis]);
    run_groups(groups, metric, target, method, |key| Scope::Slice {
        axis: axis.to_string(),
        fixed: key.iter().cloned().collect(),
    })
}

fn run_label(key: &GroupKey) -> String {
    if key.is_empty() {
        return "all".to_string();
    }
    key.iter().map(|(a, v)| format!("{a}={v}")).collect::<Vec<_>>().join(",")
}

/// One correlation per training run, where a run is every record sharing
/// all coordinates except `run_key` (usually the epoch).
pub fn correlate_trajectory(manifest: &ModelManifest, run_key: &str, metric: &str, target: Target, method: Method) -> Result<GroupedCorrelations> {
    manifest.require_axis(run_key)?;
    let groups = group_by_fixed(manifest, &[run_key]);
    run_groups(groups, metric, target, method, |key| Scope::Trajectory { run: run_label(key) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimumRule {
    /// Highest quality; ties go to the lexicographically smallest id.
    #[default]
    Argmax,
    /// Least-squares cubic of quality against the metric; picks the record
    /// whose metric is nearest the cubic's maximizer on the observed range.
    Cubic,
}

fn argmax_quality<'a>(recs: &[&'a ModelRecord]) -> &'a ModelRecord {
    recs.iter()
        .copied()
        .max_by(|a, b| a.quality.total_cmp(&b.quality).then_with(|| b.id.cmp(&a.id)))
        .expect("non-empty group")
}

fn cubic_pick<'a>(recs: &[&'a ModelRecord], metric: &str) -> &'a ModelRecord {
    let pts: Vec<(&ModelRecord, f64)> = recs.iter().filter_map(|r| r.metric(metric).map(|m| (*r, m))).collect();
    let degree = pts.len().saturating_sub(1).min(3);
    if degree == 0 {
        return argmax_quality(recs);
    }
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.1), h.max(p.1)));
    if hi <= lo {
        return argmax_quality(recs);
    }
    // fit on the metric rescaled to [-1, 1] for conditioning
    let u = |m: f64| 2.0 * (m - lo) / (hi - lo) - 1.0;
    let a = nalgebra::DMatrix::from_fn(pts.len(), degree + 1, |i, j| u(pts[i].1).powi(j as i32));
    let b = nalgebra::DVector::from_iterator(pts.len(), pts.iter().map(|p| p.0.quality));
    let Ok(coef) = a.svd(true, true).solve(&b, 1e-12) else {
        return argmax_quality(recs);
    };
    let poly = |t: f64| coef.iter().rev().fold(0.0, |acc, c| acc * t + c);
    let mut best_t = -1.0;
    for k in 0..=2000 {
        let t = -1.0 + k as f64 / 1000.0;
        if poly(t) > poly(best_t) {
            best_t = t;
        }
    }
    pts.iter()
        .min_by(|a, b| (u(a.1) - best_t).abs().total_cmp(&(u(b.1) - best_t).abs()).then_with(|| a.0.id.cmp(&b.0.id)))
        .map(|p| p.0)
        .expect("non-empty")
}

/// Best model per combination of the untuned axes. `group_axis` must not be tuned.
pub fn optimal_subset(manifest: &ModelManifest, group_axis: &str, tune_axes: &[&str], rule: OptimumRule, metric: Option<&str>) -> Result<ModelManifest> {
    manifest.require_axis(group_axis)?;
    for a in tune_axes {
        manifest.require_axis(a)?;
    }
    if tune_axes.contains(&group_axis) {
        return Err(Error::InvalidArgument(format!("group axis {group_axis:?} is also tuned")));
    }
    if rule == OptimumRule::Cubic && metric.is_none() {
        return Err(Error::InvalidArgument("the cubic optimum needs a metric".into()));
    }
    let groups = group_by_fixed(manifest, tune_axes);
    let records = groups
        .values()
        .map(|recs| match rule {
            OptimumRule::Argmax => argmax_quality(recs).clone(),
            OptimumRule::Cubic => cubic_pick(recs, metric.unwrap_or_default()).clone(),
        })
        .collect();
    Ok(ModelManifest {
        records,
        grid_axes: manifest.grid_axes.clone(),
    })
}

/// Task one: the correlation across the optimal subset.
pub fn correlate_optimal(subset: &ModelManifest, group_axis: &str, metric: &str, target: Target, method: Method) -> Result<Option<CorrelationResult>> {
    let recs: Vec<&ModelRecord> = subset.records.iter().collect();
    correlate_records(&recs, metric, target, method, Scope::OptimalSubset { group_axis: group_axis.to_string() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRate {
    pub metric: String,
    /// `None` when no series could be scored.
    pub rate: Option<f64>,
    pub hits: usize,
    pub n_series: usize,
    /// Series with fewer than 2 records carrying the metric.
    pub skipped: usize,
}

/// Fraction of series in which the smallest metric value picks a model of
/// the highest quality. Metric ties go to the smallest id.
pub fn best_selection_rate(series: &[Vec<&ModelRecord>], metric: &str) -> SelectionRate {
    let (mut hits, mut scored) = (0, 0);
    for s in series {
        let with: Vec<(&ModelRecord, f64)> = s.iter().filter_map(|r| r.metric(metric).map(|m| (*r, m))).collect();
        if with.len() < 2 {
            continue;
        }
        scored += 1;
        let pick = with
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.id.cmp(&b.0.id)))
            .map(|p| p.0)
            .expect("non-empty");
        let best = with.iter().map(|p| p.0.quality).fold(f64::NEG_INFINITY, f64::max);
        if pick.quality == best {
            hits += 1;
        }
    }
    SelectionRate {
        metric: metric.to_string(),
        rate: (scored > 0).then(|| hits as f64 / scored as f64),
        hits,
        n_series: scored,
        skipped: series.len() - scored,
    }
}

/// Splits a manifest into series by the value of `axis`.
pub fn series_by_axis<'a>(manifest: &'a ModelManifest, axis: &str) -> Result<Vec<Vec<&'a ModelRecord>>> {
    manifest.require_axis(axis)?;
    let mut groups: BTreeMap<&AxisValue, Vec<&ModelRecord>> = BTreeMap::new();
    for r in &manifest.records {
        groups.entry(&r.hyperparams[axis]).or_default().push(r);
    }
    Ok(groups.into_values().collect())
}

pub const SIMPSON_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRho {
    pub group: AxisValue,
    pub rho: MetricValue,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpsonReport {
    pub metric: String,
    pub target: Target,
    pub method: Method,
    pub group_axis: String,
    pub threshold: f64,
    /// False with fewer than 2 groups.
    pub applicable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_rho: Option<f64>,
    pub groups: Vec<GroupRho>,
    /// Sign shared by most groups with `|rho| > threshold`, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub majority_sign: Option<i8>,
    pub flagged: bool,
}

/// Flags a pooled correlation whose sign opposes the majority of per-group
/// correlations, counting only correlations with `|rho| > threshold`.
pub fn simpson_check(
    manifest: &ModelManifest,
    group_axis: &str,
    metric: &str,
    target: Target,
    method: Method,
    threshold: f64,
) -> Result<SimpsonReport> {
    let series = series_by_axis(manifest, group_axis)?;
    let mut report = SimpsonReport {
        metric: metric.to_string(),
        target,
        method,
        group_axis: group_axis.to_string(),
        threshold,
        applicable: series.len() >= 2,
        global_rho: None,
        groups: Vec::new(),
        majority_sign: None,
        flagged: false,
    };
    if !report.applicable {
        return Ok(report);
    }
    report.global_rho = correlate_global(manifest, metric, target, method)?.and_then(|r| r.rho.value());
    for s in &series {
        if let Some(r) = correlate_records(s, metric, target, method, Scope::Global)? {
            report.groups.push(GroupRho {
                group: s[0].hyperparams[group_axis].clone(),
                rho: r.rho,
                n: r.n,
            });
        }
    }
    let strong: Vec<f64> = report.groups.iter().filter_map(|g| g.rho.value()).filter(|r| r.abs() > threshold).collect();
    let pos = strong.iter().filter(|r| **r > 0.0).count();
    let neg = strong.len() - pos;
    report.majority_sign = match pos.cmp(&neg) {
        std::cmp::Ordering::Greater => Some(1),
        std::cmp::Ordering::Less => Some(-1),
        std::cmp::Ordering::Equal => None,
    };
    report.flagged = match (report.global_rho, report.majority_sign) {
        (Some(g), Some(s)) => g.abs() > threshold && g.signum() as i8 != s,
        _ => false,
    };
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    pub scope: String,
    pub target: Target,
    pub method: Method,
    pub n: usize,
    pub n_undefined: usize,
    pub p25: Option<f64>,
    pub p50: Option<f64>,
    pub p75: Option<f64>,
}

/// 25/50/75 percentiles of rho per (metric, scope kind, target, method).
pub fn percentile_summary(results: &[CorrelationResult]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, &'static str, Target, Method), (Vec<f64>, usize)> = BTreeMap::new();
    for r in results {
        let e = groups.entry((r.metric_name.clone(), r.scope.kind(), r.target, r.method)).or_default();
        match r.rho.value() {
            Some(v) => e.0.push(v),
            None => e.1 += 1,
        }
    }
    groups
        .into_iter()
        .map(|((metric, scope, target, method), (mut v, n_undefined))| {
            v.sort_by(f64::total_cmp);
            let q = |p| quantile_sorted(&v, p, QuantileMethod::Linear);
            SummaryRow {
                metric,
                scope: scope.to_string(),
                target,
                method,
                n: v.len(),
                n_undefined,
                p25: q(0.25),
                p50: q(0.5),
                p75: q(0.75),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(metric: impl Fn(f64) -> f64) -> ModelManifest {
        let mut recs = Vec::new();
        for a in 0..2 {
            for b in 0..3 {
                let q = (a * 3 + b) as f64 * 0.1 + if b == 1 { 0.05 } else { 0.0 };
                recs.push(ModelRecord::new(format!("m{a}{b}"), q).with_axis("a", a as f64).with_axis("b", b as f64).with_metric("x", metric(q)));
            }
        }
        ModelManifest::new(recs).unwrap()
    }

    #[test]
    fn negated_metric_gives_plus_one_slices() {
        let m = grid(|q| -q);
        for axis in ["a", "b"] {
            let s = correlate_slices(&m, axis, "x", Target::Quality, Method::Spearman).unwrap();
            assert!(!s.results.is_empty());
            assert!(s.results.iter().all(|r| r.rho.value() == Some(1.0)));
        }
        // slices along b: one per value of a, each covering three records
        let s = correlate_slices(&m, "b", "x", Target::Quality, Method::Kendall).unwrap();
        assert_eq!(s.results.len(), 2);
        assert!(s.results.iter().all(|r| r.n == 3));
    }

    #[test]
    fn constant_metric_slice_is_undefined() {
        let m = grid(|_| 1.0);
        let s = correlate_slices(&m, "b", "x", Target::Quality, Method::Spearman).unwrap();
        assert!(s.results.iter().all(|r| !r.rho.is_defined()));
    }

    #[test]
    fn slices_match_brute_force_enumeration() {
        // 8 records on a 2x2x2 grid
        let mut recs = Vec::new();
        let qs = [0.3, 0.1, 0.7, 0.4, 0.9, 0.2, 0.5, 0.8];
        let ms = [2.0, 5.0, 1.0, 3.0, 4.0, 8.0, 6.0, 7.0];
        for i in 0..8 {
            recs.push(
                ModelRecord::new(format!("r{i}"), qs[i])
                    .with_axis("p", (i & 1) as f64)
                    .with_axis("q", ((i >> 1) & 1) as f64)
                    .with_axis("r", (i >> 2) as f64)
                    .with_metric("x", ms[i]),
            );
        }
        let m = ModelManifest::new(recs).unwrap();
        for (bit, axis) in ["p", "q", "r"].iter().enumerate() {
            let s = correlate_slices(&m, axis, "x", Target::Quality, Method::Spearman).unwrap();
            assert_eq!(s.results.len(), 4);
            // each slice pairs i with i ^ (1 << bit); two points give rho = ±1
            let mut expect: Vec<f64> = (0..8usize)
                .filter(|i| i & (1 << bit) == 0)
                .map(|i| {
                    let j = i | (1 << bit);
                    if (-ms[i] - -ms[j]) * (qs[i] - qs[j]) > 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                })
                .collect();
            let mut got: Vec<f64> = s.results.iter().map(|r| r.rho.value().unwrap()).collect();
            expect.sort_by(f64::total_cmp);
            got.sort_by(f64::total_cmp);
            assert_eq!(got, expect, "axis {axis}");
        }
    }

    #[test]
    fn trajectory_skips_single_epoch_runs() {
        let mut recs = Vec::new();
        for e in 0..5 {
            let q = e as f64;
            recs.push(ModelRecord::new(format!("a{e}"), q).with_axis("lr", 0.1).with_axis("epoch", e as f64).with_metric("x", 10.0 - q));
        }
        recs.push(ModelRecord::new("b0", 1.0).with_axis("lr", 0.2).with_axis("epoch", 0.0).with_metric("x", 1.0));
        let m = ModelManifest::new(recs).unwrap();
        let t = correlate_trajectory(&m, "epoch", "x", Target::Quality, Method::Spearman).unwrap();
        assert_eq!(t.results.len(), 1);
        assert_eq!(t.skipped, 1);
        assert_eq!(t.results[0].rho.value(), Some(1.0));
        assert_eq!(t.results[0].scope, Scope::Trajectory { run: "lr=0.1".into() });
    }

    #[test]
    fn optimal_subset_argmax_and_ties() {
        let recs = vec![
            ModelRecord::new("g0-a", 0.5).with_axis("g", 0.0).with_axis("lr", 1.0),
            ModelRecord::new("g0-b", 0.9).with_axis("g", 0.0).with_axis("lr", 2.0),
            ModelRecord::new("g0-c", 0.1).with_axis("g", 0.0).with_axis("lr", 3.0),
            ModelRecord::new("g1-b", 0.7).with_axis("g", 1.0).with_axis("lr", 1.0),
            ModelRecord::new("g1-a", 0.7).with_axis("g", 1.0).with_axis("lr", 2.0),
            ModelRecord::new("g1-c", 0.2).with_axis("g", 1.0).with_axis("lr", 3.0),
        ];
        let m = ModelManifest::new(recs).unwrap();
        let s = optimal_subset(&m, "g", &["lr"], OptimumRule::Argmax, None).unwrap();
        let ids: Vec<&str> = s.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["g0-b", "g1-a"]);
        assert!(optimal_subset(&m, "g", &["g"], OptimumRule::Argmax, None).is_err());
    }

    #[test]
    fn cubic_optimum_picks_interior_peak() {
        // quality peaks at metric 2 on a parabola
        let recs: Vec<ModelRecord> = (0..5)
            .map(|i| {
                let x = i as f64;
                ModelRecord::new(format!("r{i}"), -(x - 2.0).powi(2)).with_axis("g", 0.0).with_axis("lr", x).with_metric("x", x)
            })
            .collect();
        let m = ModelManifest::new(recs).unwrap();
        let s = optimal_subset(&m, "g", &["lr"], OptimumRule::Cubic, Some("x")).unwrap();
        assert_eq!(s.records[0].id, "r2");
    }

    #[test]
    fn selection_rate_extremes() {
        let series: Vec<Vec<ModelRecord>> = (0..3)
            .map(|s| (0..4).map(|i| ModelRecord::new(format!("s{s}m{i}"), i as f64).with_metric("neg", -(i as f64)).with_metric("pos", i as f64)).collect())
            .collect();
        let refs: Vec<Vec<&ModelRecord>> = series.iter().map(|s| s.iter().collect()).collect();
        assert_eq!(best_selection_rate(&refs, "neg").rate, Some(1.0));
        assert_eq!(best_selection_rate(&refs, "pos").rate, Some(0.0));
        assert_eq!(best_selection_rate(&refs, "missing").skipped, 3);
    }

    #[test]
    fn simpson_single_group_not_applicable() {
        let m = grid(|q| -q);
        let mut one = m.clone();
        one.records.retain(|r| r.hyperparams["a"] == AxisValue::Num(0.0));
        let r = simpson_check(&one, "a", "x", Target::Quality, Method::Spearman, SIMPSON_THRESHOLD).unwrap();
        assert!(!r.applicable && !r.flagged && r.groups.is_empty());
        let r = simpson_check(&m, "a", "x", Target::Quality, Method::Spearman, SIMPSON_THRESHOLD).unwrap();
        assert!(r.applicable && !r.flagged);
    }

    #[test]
    fn gap_target_keeps_metric_sign() {
        let recs: Vec<ModelRecord> = (0..4)
            .map(|i| ModelRecord {
                train_quality: Some(1.0),
                ..ModelRecord::new(format!("r{i}"), i as f64 * 0.1).with_metric("x", i as f64)
            })
            .collect();
        let refs: Vec<&ModelRecord> = recs.iter().collect();
        // gap falls as x rises
        let r = correlate_records(&refs, "x", Target::GeneralizationGap, Method::Spearman, Scope::Global).unwrap().unwrap();
        assert_eq!(r.rho.value(), Some(-1.0));
        assert_eq!(r.sign_convention, SignConvention::AsIs);
    }

    #[test]
    fn summary_percentiles() {
        let mk = |rho: f64| CorrelationResult {
            target: Target::Quality,
            method: Method::Spearman,
            scope: Scope::Trajectory { run: "r".into() },
            metric_name: "x".into(),
            rho: MetricValue::from(rho),
            n: 3,
            n_dropped: 0,
            sign_convention: SignConvention::MetricNegated,
        };
        let rows = percentile_summary(&[mk(0.0), mk(0.5), mk(1.0)]);
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].p25, rows[0].p50, rows[0].p75), (Some(0.25), Some(0.5), Some(0.75)));
    }
}
