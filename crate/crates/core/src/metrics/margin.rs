//! Output-margin normalized norm metrics.

use super::{names, MetricFlag, MetricValue};
use crate::error::{Error, Result};
use crate::numeric::{quantile_sorted, QuantileMethod};

pub const DEFAULT_PERCENTILE: f64 = 10.0;

/// The `percentile`-th percentile of the margins, interpolating linearly
/// between order statistics at rank `p (n + 1)`, clamped to the sample range.
pub fn margin_percentile(margins: &[f64], percentile: f64) -> Result<f64> {
    if margins.is_empty() {
        return Err(Error::InvalidArgument("no margins".into()));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::InvalidArgument(format!("percentile {percentile} outside [0, 100]")));
    }
    if margins.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("non-finite margin".into()));
    }
    let mut sorted = margins.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, percentile / 100.0, QuantileMethod::Weibull).unwrap())
}

/// Per-layer norms entering the margin metrics.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorms {
    /// `‖W‖₂²`.
    pub spectral_sq: f64,
    /// `‖W‖_F²`.
    pub frobenius_sq: f64,
}

pub type MarginMetric = (&'static str, MetricValue, Vec<MetricFlag>);

fn log_over_margin(logs: f64, gamma: f64, d: f64, sum_form: bool) -> (MetricValue, Vec<MetricFlag>) {
    if gamma <= 0.0 {
        return (
            MetricValue::undefined(format!("margin {gamma} is not positive")),
            vec![MetricFlag::NegativeMargin],
        );
    }
    if !logs.is_finite() {
        return (MetricValue::undefined("zero matrix"), vec![]);
    }
    let prod = logs - 2.0 * gamma.ln();
    let v = if sum_form { d.ln() + prod / d } else { prod };
    (MetricValue::from(v), vec![])
}

/// The six margin metrics for margin `γ`. `path_norm` is `None` when no
/// probe network is available.
pub fn margin_metrics(layers: &[LayerNorms], path_norm: Option<f64>, gamma: f64) -> Vec<MarginMetric> {
    let d = layers.len() as f64;
    let log_spec: f64 = layers.iter().map(|l| l.spectral_sq.ln()).sum();
    let log_fro: f64 = layers.iter().map(|l| l.frobenius_sq.ln()).sum();
    let inverse = if gamma != 0.0 {
        MetricValue::from(1.0 / (gamma * gamma))
    } else {
        MetricValue::undefined("zero margin")
    };
    let path = match path_norm {
        Some(_) if gamma == 0.0 => MetricValue::undefined("zero margin"),
        Some(p) => MetricValue::from(p / (gamma * gamma)),
        None => MetricValue::undefined("path norm needs a probe network"),
    };
    let (ps, ps_f) = log_over_margin(log_spec, gamma, d, false);
    let (ss, ss_f) = log_over_margin(log_spec, gamma, d, true);
    let (pf, pf_f) = log_over_margin(log_fro, gamma, d, false);
    let (sf, sf_f) = log_over_margin(log_fro, gamma, d, true);
    vec![
        (names::INVERSE_MARGIN, inverse, vec![]),
        (names::LOG_PROD_OF_SPEC_OVER_MARGIN, ps, ps_f),
        (names::LOG_SUM_OF_SPEC_OVER_MARGIN, ss, ss_f),
        (names::LOG_PROD_OF_FRO_OVER_MARGIN, pf, pf_f),
        (names::LOG_SUM_OF_FRO_OVER_MARGIN, sf, sf_f),
        (names::PATH_NORM_OVER_MARGIN, path, vec![]),
    ]
}
