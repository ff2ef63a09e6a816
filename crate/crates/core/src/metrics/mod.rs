//! The 28 generalization metrics and the per-checkpoint report.
//!
//! Logs are natural. Per-layer values are aggregated per metric: summed
//! (`param_norm`, `fro_dist`, `dist_spec_init`), averaged over layers with a
//! value (norm logs, stable rank, MP soft rank, shape and hybrid metrics), or
//! computed once for the whole network (path norm, margin and PAC-Bayes metrics).

pub mod margin;
pub mod pacbayes;
pub mod scale;
pub mod shape;
mod value;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use margin::{margin_metrics, margin_percentile, LayerNorms};
pub use pacbayes::{pacbayes_metrics, pacbayes_sigma, PacBayesConfig, PacBayesInputs, SigmaSearch};
pub use scale::{dist_spec_init, fro_dist, log_norm, log_spectral_norm, mp_softrank, param_norm, stable_rank};
pub use shape::{alpha_weighted, fit_layer, log_alpha_norm, shape_metrics, FitSelection, LayerFits, ShapeOptions};
pub use value::{MetricFlag, MetricValue, UndefinedTag};

use crate::error::{Error, Result};
use crate::esd::{compute_esd, Esd};
use crate::netprobe::{margins, ProbeDataset, ProbeNetwork, ProbeObjective};
use crate::tensor_io::{CheckpointSummary, SkippedTensor, WeightMatrix};

pub mod names {
    pub const PARAM_NORM: &str = "param_norm";
    pub const FRO_DIST: &str = "fro_dist";
    pub const LOG_NORM: &str = "log_norm";
    pub const LOG_SPECTRAL_NORM: &str = "log_spectral_norm";
    pub const DIST_SPEC_INIT: &str = "dist_spec_init";
    pub const PATH_NORM: &str = "path_norm";
    pub const MP_SOFTRANK: &str = "mp_softrank";
    pub const STABLE_RANK: &str = "stable_rank";
    pub const PL_ALPHA: &str = "PL_alpha";
    pub const E_TPL_BETA: &str = "E_TPL_beta";
    pub const E_TPL_LAMBDA: &str = "E_TPL_lambda";
    pub const EXP_LAMBDA: &str = "EXP_lambda";
    pub const PL_KS_DISTANCE: &str = "PL_ks_distance";
    pub const E_TPL_KS_DISTANCE: &str = "E_TPL_ks_distance";
    pub const ALPHA_WEIGHTED: &str = "alpha_weighted";
    pub const LOG_ALPHA_NORM: &str = "log_alpha_norm";
    pub const INVERSE_MARGIN: &str = "inverse_margin";
    pub const LOG_PROD_OF_SPEC_OVER_MARGIN: &str = "log_prod_of_spec_over_margin";
    pub const LOG_SUM_OF_SPEC_OVER_MARGIN: &str = "log_sum_of_spec_over_margin";
    pub const LOG_PROD_OF_FRO_OVER_MARGIN: &str = "log_prod_of_fro_over_margin";
    pub const LOG_SUM_OF_FRO_OVER_MARGIN: &str = "log_sum_of_fro_over_margin";
    pub const PATH_NORM_OVER_MARGIN: &str = "path_norm_over_margin";
    pub const PACBAYES_INIT: &str = "pacbayes_init";
    pub const PACBAYES_ORIG: &str = "pacbayes_orig";
    pub const PACBAYES_FLATNESS: &str = "pacbayes_flatness";
    pub const PACBAYES_MAG_INIT: &str = "pacbayes_mag_init";
    pub const PACBAYES_MAG_ORIG: &str = "pacbayes_mag_orig";
    pub const PACBAYES_MAG_FLATNESS: &str = "pacbayes_mag_flatness";
}

use names::*;

pub const ALL_METRICS: [&str; 28] = [
    PARAM_NORM,
    FRO_DIST,
    LOG_NORM,
    LOG_SPECTRAL_NORM,
    DIST_SPEC_INIT,
    PATH_NORM,
    MP_SOFTRANK,
    STABLE_RANK,
    PL_ALPHA,
    E_TPL_BETA,
    E_TPL_LAMBDA,
    EXP_LAMBDA,
    PL_KS_DISTANCE,
    E_TPL_KS_DISTANCE,
    ALPHA_WEIGHTED,
    LOG_ALPHA_NORM,
    INVERSE_MARGIN,
    LOG_PROD_OF_SPEC_OVER_MARGIN,
    LOG_SUM_OF_SPEC_OVER_MARGIN,
    LOG_PROD_OF_FRO_OVER_MARGIN,
    LOG_SUM_OF_FRO_OVER_MARGIN,
    PATH_NORM_OVER_MARGIN,
    PACBAYES_INIT,
    PACBAYES_ORIG,
    PACBAYES_FLATNESS,
    PACBAYES_MAG_INIT,
    PACBAYES_MAG_ORIG,
    PACBAYES_MAG_FLATNESS,
];

/// Metrics that need training data (margins or loss perturbations).
pub fn needs_data(metric: &str) -> bool {
    ALL_METRICS[16..].contains(&metric)
}

/// Metrics normalized by the training-sample count when requested.
pub fn is_normalizable(metric: &str) -> bool {
    matches!(metric, PARAM_NORM | FRO_DIST | DIST_SPEC_INIT) || needs_data(metric)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Sum,
    Mean,
    Global,
}

pub fn aggregation_rule(metric: &str) -> Aggregation {
    match metric {
        PARAM_NORM | FRO_DIST | DIST_SPEC_INIT => Aggregation::Sum,
        m if m == PATH_NORM || needs_data(m) => Aggregation::Global,
        _ => Aggregation::Mean,
    }
}

/// Sum or mean of per-layer values; returns `(value, layers used, layers undefined)`.
/// A sum with any undefined layer is undefined; a mean skips undefined layers.
pub fn aggregate_values(rule: Aggregation, values: &[MetricValue]) -> (MetricValue, usize, usize) {
    let defined: Vec<f64> = values.iter().filter_map(MetricValue::value).collect();
    let n_undef = values.len() - defined.len();
    let v = match rule {
        _ if values.is_empty() => MetricValue::undefined("no layers"),
        Aggregation::Sum if n_undef > 0 => {
            let first = values.iter().find_map(MetricValue::reason).unwrap_or("");
            MetricValue::undefined(format!("{n_undef} undefined layer(s), first: {first}"))
        }
        Aggregation::Sum | Aggregation::Global => MetricValue::from(defined.iter().sum::<f64>()),
        Aggregation::Mean if defined.is_empty() => {
            let first = values.iter().find_map(MetricValue::reason).unwrap_or("");
            MetricValue::undefined(format!("no layer has a value, first: {first}"))
        }
        Aggregation::Mean => MetricValue::from(defined.iter().sum::<f64>() / defined.len() as f64),
    };
    (v, defined.len(), n_undef)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    SqrtM,
    M,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization::None),
            "sqrt_m" => Ok(Normalization::SqrtM),
            "m" => Ok(Normalization::M),
            other => Err(Error::InvalidArgument(format!("normalization must be none, sqrt_m or m, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMetricValue {
    pub layer_name: String,
    pub metric_name: String,
    pub value: MetricValue,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flags: BTreeSet<MetricFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateEntry {
    pub metric: String,
    pub value: MetricValue,
    pub rule: Aggregation,
    /// Layers whose value entered the aggregate.
    pub d: usize,
    pub n_undefined: usize,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flags: BTreeSet<MetricFlag>,
    /// Value before sample-count normalization, when one was applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unnormalized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub mode: Normalization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    pub convention: String,
    pub applies_to: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeDiagnostics {
    pub n_samples: usize,
    pub n_parameters: usize,
    pub margin_percentile: f64,
    pub margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<SigmaSearch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_magnitude_aware: Option<SigmaSearch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub checkpoint: String,
    pub layers: Vec<String>,
    /// Number of weight matrices.
    pub d: usize,
    pub per_layer: Vec<LayerMetricValue>,
    pub aggregated: Vec<AggregateEntry>,
    pub n_undefined_layer_values: usize,
    pub normalization: NormalizationRecord,
    pub fits: Vec<LayerFits>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeDiagnostics>,
    /// Tensors in the checkpoint that were not analyzed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_tensors: Vec<SkippedTensor>,
}

impl MetricReport {
    pub fn aggregate(&self, metric: &str) -> Option<&AggregateEntry> {
        self.aggregated.iter().find(|a| a.metric == metric)
    }

    pub fn value(&self, metric: &str) -> Option<f64> {
        self.aggregate(metric).and_then(|a| a.value.value())
    }

    pub fn layer_values(&self, metric: &str) -> Vec<&LayerMetricValue> {
        self.per_layer.iter().filter(|v| v.metric_name == metric).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportOptions {
    pub metrics: Vec<String>,
    pub shape: ShapeOptions,
    pub normalization: Normalization,
    /// Declared training-sample count.
    pub m: Option<f64>,
    pub margin_percentile: f64,
    pub pacbayes: PacBayesConfig,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            metrics: ALL_METRICS[..16].iter().map(|s| s.to_string()).collect(),
            shape: ShapeOptions::default(),
            normalization: Normalization::None,
            m: None,
            margin_percentile: margin::DEFAULT_PERCENTILE,
            pacbayes: PacBayesConfig::default(),
        }
    }
}

/// Expands `all`, `all-data-free` and comma lists into metric names.
pub fn parse_metric_selection(spec: &str) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let names: Vec<&str> = match item {
            "all" => ALL_METRICS.to_vec(),
            "all-data-free" => ALL_METRICS.iter().copied().filter(|m| !needs_data(m)).collect(),
            "shape" => shape::SHAPE_METRICS.to_vec(),
            m if ALL_METRICS.contains(&m) => vec![m],
            other => return Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        };
        for n in names {
            if !out.iter().any(|o| o == n) {
                out.push(n.to_string());
            }
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("empty metric selection".into()));
    }
    // report order follows the canonical table
    out.sort_by_key(|m| ALL_METRICS.iter().position(|a| a == m));
    Ok(out)
}

/// The probe network and data for data-dependent metrics.
pub struct ProbeInputs<'a> {
    pub network: &'a ProbeNetwork,
    pub dataset: &'a ProbeDataset,
    pub init: Option<&'a ProbeNetwork>,
}

struct Layer<'a> {
    matrix: &'a WeightMatrix,
    esd: std::result::Result<Esd, String>,
    fits: LayerFits,
}

fn per_layer_value(metric: &str, layer: &Layer, init: Option<&CheckpointSummary>) -> (MetricValue, Vec<MetricFlag>) {
    let esd = match &layer.esd {
        Ok(e) => e,
        Err(reason) if metric != PARAM_NORM && metric != LOG_NORM => return (MetricValue::undefined(reason.clone()), vec![]),
        Err(_) => {
            let fro = layer.matrix.frobenius_sq();
            let v = if metric == PARAM_NORM { MetricValue::from(fro) } else { scale::layer_log_norm(fro) };
            return (v, vec![]);
        }
    };
    let with_init = |f: &dyn Fn(&WeightMatrix, &WeightMatrix) -> Result<f64>| -> MetricValue {
        match init {
            None => MetricValue::undefined("no initialization checkpoint (--init)"),
            Some(ck) => match ck.get(layer.matrix.name()) {
                None => MetricValue::undefined(format!("no initial matrix named {}", layer.matrix.name())),
                Some(i) => f(layer.matrix, i).into(),
            },
        }
    };
    match metric {
        PARAM_NORM => (MetricValue::from(layer.matrix.frobenius_sq()), vec![]),
        LOG_NORM => (scale::layer_log_norm(layer.matrix.frobenius_sq()), vec![]),
        LOG_SPECTRAL_NORM => (scale::layer_log_spectral_norm(esd), vec![]),
        STABLE_RANK => (scale::layer_stable_rank(esd), vec![]),
        FRO_DIST => (with_init(&scale::layer_fro_dist), vec![]),
        DIST_SPEC_INIT => (with_init(&scale::layer_dist_spec), vec![]),
        other => shape::layer_value(other, esd, &layer.fits).unwrap_or_else(|| (MetricValue::undefined("not a per-layer metric"), vec![])),
    }
}

/// Computes the requested metrics for one checkpoint. Data-dependent metrics
/// are undefined unless `probe` is supplied.
pub fn compute_report(
    checkpoint: &CheckpointSummary,
    init: Option<&CheckpointSummary>,
    probe: Option<ProbeInputs>,
    options: &ReportOptions,
) -> Result<MetricReport> {
    for m in &options.metrics {
        if !ALL_METRICS.contains(&m.as_str()) {
            return Err(Error::InvalidArgument(format!("unknown metric {m:?}")));
        }
    }
    if options.normalization != Normalization::None && options.m.is_none() && probe.is_none() {
        return Err(Error::InvalidArgument("normalization needs the training-sample count m".into()));
    }
    let selection = FitSelection::for_metrics(options.metrics.iter().map(String::as_str));

    let layers: Vec<Layer> = checkpoint
        .matrices
        .par_iter()
        .map(|matrix| {
            let esd = compute_esd(matrix).map_err(|e| e.to_string());
            let fits = match &esd {
                Ok(e) => fit_layer(e, selection, &options.shape),
                Err(_) => LayerFits {
                    layer: matrix.name().to_string(),
                    fits: vec![],
                    failures: vec![],
                },
            };
            Layer { matrix, esd, fits }
        })
        .collect();

    let mut per_layer = Vec::new();
    let mut aggregated = Vec::new();
    for metric in options.metrics.iter().filter(|m| aggregation_rule(m) != Aggregation::Global) {
        let rows: Vec<LayerMetricValue> = layers
            .par_iter()
            .map(|l| {
                let (value, flags) = per_layer_value(metric, l, init);
                LayerMetricValue {
                    layer_name: l.matrix.name().to_string(),
                    metric_name: metric.clone(),
                    value,
                    flags: flags.into_iter().collect(),
                }
            })
            .collect();
        let values: Vec<MetricValue> = rows.iter().map(|r| r.value.clone()).collect();
        let (value, d, n_undefined) = aggregate_values(aggregation_rule(metric), &values);
        aggregated.push(AggregateEntry {
            metric: metric.clone(),
            value,
            rule: aggregation_rule(metric),
            d,
            n_undefined,
            flags: rows.iter().flat_map(|r| r.flags.iter().copied()).collect(),
            unnormalized: None,
        });
        per_layer.extend(rows);
    }

    let global: Vec<&String> = options.metrics.iter().filter(|m| aggregation_rule(m) == Aggregation::Global).collect();
    let mut probe_diag = None;
    if !global.is_empty() {
        let (entries, diag) = global_metrics(&layers, probe.as_ref(), options)?;
        probe_diag = diag;
        for m in global {
            let (value, flags) = entries
                .iter()
                .find(|e| e.0 == m.as_str())
                .map(|e| (e.1.clone(), e.2.clone()))
                .unwrap_or_else(|| (MetricValue::undefined("needs a probe network and dataset (--probe, --probe-data)"), vec![]));
            aggregated.push(AggregateEntry {
                metric: m.clone(),
                n_undefined: usize::from(!value.is_defined()),
                value,
                rule: Aggregation::Global,
                d: layers.len(),
                flags: flags.into_iter().collect(),
                unnormalized: None,
            });
        }
        aggregated.sort_by_key(|a| ALL_METRICS.iter().position(|n| *n == a.metric));
    }

    let m = options.m.or_else(|| probe.as_ref().map(|p| p.dataset.len() as f64));
    let normalization = normalize(&mut aggregated, options.normalization, m);
    Ok(MetricReport {
        checkpoint: checkpoint.path.display().to_string(),
        layers: layers.iter().map(|l| l.matrix.name().to_string()).collect(),
        d: layers.len(),
        n_undefined_layer_values: per_layer.iter().filter(|v: &&LayerMetricValue| !v.value.is_defined()).count(),
        per_layer,
        aggregated,
        normalization,
        fits: layers.into_iter().map(|l| l.fits).filter(|f| !f.fits.is_empty() || !f.failures.is_empty()).collect(),
        probe: probe_diag,
        skipped_tensors: checkpoint.skipped.clone(),
    })
}

type GlobalEntry = (&'static str, MetricValue, Vec<MetricFlag>);

fn global_metrics(
    layers: &[Layer],
    probe: Option<&ProbeInputs>,
    options: &ReportOptions,
) -> Result<(Vec<GlobalEntry>, Option<ProbeDiagnostics>)> {
    let Some(p) = probe else {
        return Ok((vec![(PATH_NORM, MetricValue::undefined("path norm needs a probe network (--probe)"), vec![])], None));
    };
    let requested = |m: &str| options.metrics.iter().any(|x| x == m);
    let path = p.network.squared_forward_allones();
    let mut out: Vec<GlobalEntry> = vec![(PATH_NORM, MetricValue::from(path), vec![])];

    let gamma = margin_percentile(&margins(p.network, p.dataset)?, options.margin_percentile)?;
    let norms: Vec<LayerNorms> = layers
        .iter()
        .map(|l| LayerNorms {
            spectral_sq: l.esd.as_ref().map_or(f64::NAN, |e| e.lambda_max),
            frobenius_sq: l.matrix.frobenius_sq(),
        })
        .collect();
    out.extend(margin_metrics(&norms, Some(path), gamma));

    let wants_pacbayes = ALL_METRICS[22..].iter().any(|m| requested(m));
    let (mut sigma, mut sigma_mag) = (None, None);
    if wants_pacbayes {
        let objective = ProbeObjective {
            network: p.network,
            data: p.dataset,
        };
        let s = pacbayes_sigma(&objective, &options.pacbayes, false)?;
        let sm = pacbayes_sigma(&objective, &options.pacbayes, true)?;
        let params = p.network.parameters();
        let init_params = p.init.map(|n| n.parameters());
        let m = options.m.unwrap_or(p.dataset.len() as f64);
        let values = pacbayes_metrics(&PacBayesInputs {
            params: &params,
            init: init_params.as_deref(),
            sigma: s.sigma,
            sigma_mag: sm.sigma,
            m,
            epsilon: options.pacbayes.epsilon,
        })?;
        for (name, v) in values {
            let flag = if name.starts_with("pacbayes_mag") { sm.flag } else { s.flag };
            out.push((name, v, flag.into_iter().collect()));
        }
        sigma = Some(s);
        sigma_mag = Some(sm);
    }
    let diag = ProbeDiagnostics {
        n_samples: p.dataset.len(),
        n_parameters: p.network.n_parameters(),
        margin_percentile: options.margin_percentile,
        margin: gamma,
        path_norm: Some(path),
        sigma,
        sigma_magnitude_aware: sigma_mag,
    };
    Ok((out, Some(diag)))
}

fn normalize(aggregated: &mut [AggregateEntry], mode: Normalization, m: Option<f64>) -> NormalizationRecord {
    let (divisor, convention) = match (mode, m) {
        (Normalization::SqrtM, Some(m)) => (m.sqrt(), "value / sqrt(m)"),
        (Normalization::M, Some(m)) => (m, "value / m"),
        _ => (1.0, "none"),
    };
    let mut applies_to = Vec::new();
    if divisor != 1.0 || mode != Normalization::None {
        for a in aggregated.iter_mut().filter(|a| is_normalizable(&a.metric)) {
            applies_to.push(a.metric.clone());
            if let Some(v) = a.value.value() {
                a.unnormalized = Some(v);
                a.value = MetricValue::from(v / divisor);
            }
        }
    }
    NormalizationRecord {
        mode,
        m,
        convention: convention.to_string(),
        applies_to,
    }
}
