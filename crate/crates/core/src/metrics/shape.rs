//! Tail-fit based metrics and their scale-weighted hybrids.

use serde::{Deserialize, Serialize};

use super::{aggregate_values, names, Aggregation, MetricFlag, MetricValue};
use crate::esd::Esd;
use crate::tailfit::{fit_etpl, fit_exp, fit_mp, fit_pl, Family, FitConfig, QualityFlag, TailFit, XminStrategy};

/// Which families to fit for one layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitSelection {
    pub pl: bool,
    pub etpl: bool,
    pub exp: bool,
    pub mp: bool,
}

impl FitSelection {
    pub fn all() -> Self {
        FitSelection {
            pl: true,
            etpl: true,
            exp: true,
            mp: true,
        }
    }

    /// Families needed by the named metrics.
    pub fn for_metrics<'a>(metrics: impl IntoIterator<Item = &'a str>) -> Self {
        let mut s = FitSelection::default();
        for m in metrics {
            match m {
                names::PL_ALPHA | names::PL_KS_DISTANCE | names::ALPHA_WEIGHTED | names::LOG_ALPHA_NORM => s.pl = true,
                names::E_TPL_BETA | names::E_TPL_LAMBDA | names::E_TPL_KS_DISTANCE => s.etpl = true,
                names::EXP_LAMBDA => s.exp = true,
                names::MP_SOFTRANK => s.mp = true,
                _ => {}
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapeOptions {
    /// `x_min` rule for PL fits.
    pub pl_xmin: XminStrategy,
    /// `x_min` rule for E-TPL and EXP fits.
    pub tail_xmin: XminStrategy,
    pub fit: FitConfig,
}

impl Default for ShapeOptions {
    fn default() -> Self {
        ShapeOptions {
            pl_xmin: XminStrategy::KsSearch,
            tail_xmin: XminStrategy::FixFinger,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub family: Family,
    pub kind: String,
    pub message: String,
}

/// Every fit attempted for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFits {
    pub layer: String,
    pub fits: Vec<TailFit>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FitFailure>,
}

impl LayerFits {
    pub fn get(&self, family: Family) -> Result<&TailFit, String> {
        if let Some(f) = self.fits.iter().find(|f| f.family == family) {
            return Ok(f);
        }
        match self.failures.iter().find(|f| f.family == family) {
            Some(f) => Err(format!("{family} fit failed: {}", f.message)),
            None => Err(format!("{family} fit not run")),
        }
    }
}

pub fn fit_layer(esd: &Esd, selection: FitSelection, opts: &ShapeOptions) -> LayerFits {
    let mut out = LayerFits {
        layer: esd.matrix_name.clone(),
        fits: Vec::new(),
        failures: Vec::new(),
    };
    let mut record = |family: Family, r: Result<TailFit, (&'static str, String)>| match r {
        Ok(f) => out.fits.push(f),
        Err((kind, message)) => out.failures.push(FitFailure {
            family,
            kind: kind.to_string(),
            message,
        }),
    };
    let flat = |e: crate::error::Error| (e.kind(), e.to_string());
    let pl = selection.pl.then(|| fit_pl(esd, opts.pl_xmin, &opts.fit));
    // a KS-searched E-TPL/EXP tail takes the x_min of a KS-searched PL fit
    let tail_xmin = match opts.tail_xmin {
        XminStrategy::KsSearch => match &pl {
            Some(Ok(f)) if opts.pl_xmin == XminStrategy::KsSearch => Ok(XminStrategy::Fixed(f.x_min)),
            _ => fit_pl(esd, XminStrategy::KsSearch, &opts.fit).map(|f| XminStrategy::Fixed(f.x_min)).map_err(flat),
        },
        s => Ok(s),
    };
    if let Some(r) = pl {
        record(Family::PowerLaw, r.map_err(flat));
    }
    if selection.etpl {
        let r = tail_xmin.clone().and_then(|s| fit_etpl(esd, s, &opts.fit).map_err(flat));
        record(Family::TruncatedPowerLaw, r);
    }
    if selection.exp {
        let r = tail_xmin.clone().and_then(|s| fit_exp(esd, s, &opts.fit).map_err(flat));
        record(Family::Exponential, r);
    }
    if selection.mp {
        record(Family::MarchenkoPastur, fit_mp(esd).map_err(flat));
    }
    out
}

fn fit_flags(fit: &TailFit) -> Vec<MetricFlag> {
    match fit.quality_flag {
        QualityFlag::Ok => vec![],
        QualityFlag::PoorPlFit => vec![MetricFlag::PoorPlFit],
        QualityFlag::InsufficientTail => vec![MetricFlag::InsufficientTail],
        QualityFlag::DegenerateSpectrum => vec![MetricFlag::DegenerateSpectrum],
    }
}

fn from_fit(fits: &LayerFits, family: Family, pick: impl Fn(&TailFit) -> Option<f64>) -> (MetricValue, Vec<MetricFlag>) {
    match fits.get(family) {
        Ok(f) => {
            let v = match pick(f) {
                Some(v) => MetricValue::from(v),
                None => MetricValue::undefined(format!("{family} tail too small to fit (n_tail = {})", f.n_tail)),
            };
            (v, fit_flags(f))
        }
        Err(reason) => (MetricValue::undefined(reason), vec![]),
    }
}

/// `α log λ_max`.
pub fn layer_alpha_weighted(alpha: f64, lambda_max: f64) -> MetricValue {
    if lambda_max > 0.0 {
        MetricValue::from(alpha * lambda_max.ln())
    } else {
        MetricValue::undefined("zero matrix")
    }
}

/// `log Σ λⱼ^α` over the positive eigenvalues, evaluated as a log-sum-exp.
pub fn layer_log_alpha_norm(esd: &Esd, alpha: f64) -> MetricValue {
    let pos = esd.positive();
    if pos.is_empty() {
        return MetricValue::undefined("zero spectrum");
    }
    let logs: Vec<f64> = pos.iter().map(|l| alpha * l.ln()).collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    MetricValue::from(m + logs.iter().map(|v| (v - m).exp()).sum::<f64>().ln())
}

/// Per-layer value and flags of a fit-derived metric, or `None` for other names.
pub fn layer_value(metric: &str, esd: &Esd, fits: &LayerFits) -> Option<(MetricValue, Vec<MetricFlag>)> {
    Some(match metric {
        names::PL_ALPHA => from_fit(fits, Family::PowerLaw, |f| f.alpha),
        names::PL_KS_DISTANCE => from_fit(fits, Family::PowerLaw, |f| f.alpha.map(|_| f.ks_distance)),
        names::E_TPL_BETA => from_fit(fits, Family::TruncatedPowerLaw, |f| f.beta),
        names::E_TPL_LAMBDA => from_fit(fits, Family::TruncatedPowerLaw, |f| f.lambda),
        names::E_TPL_KS_DISTANCE => from_fit(fits, Family::TruncatedPowerLaw, |f| f.beta.map(|_| f.ks_distance)),
        names::EXP_LAMBDA => from_fit(fits, Family::Exponential, |f| f.lambda),
        names::ALPHA_WEIGHTED | names::LOG_ALPHA_NORM => {
            let (alpha, flags) = from_fit(fits, Family::PowerLaw, |f| f.alpha);
            let v = match alpha.value() {
                Some(a) if metric == names::ALPHA_WEIGHTED => layer_alpha_weighted(a, esd.lambda_max),
                Some(a) => layer_log_alpha_norm(esd, a),
                None => alpha,
            };
            (v, flags)
        }
        names::MP_SOFTRANK => match fits.get(Family::MarchenkoPastur) {
            Ok(f) => (super::scale::layer_mp_softrank(esd, f), fit_flags(f)),
            Err(reason) => (MetricValue::undefined(reason), vec![]),
        },
        _ => return None,
    })
}

pub const SHAPE_METRICS: [&str; 6] = [
    names::PL_ALPHA,
    names::E_TPL_BETA,
    names::E_TPL_LAMBDA,
    names::EXP_LAMBDA,
    names::PL_KS_DISTANCE,
    names::E_TPL_KS_DISTANCE,
];

/// The six shape metrics, each averaged over the layers that have a value.
pub fn shape_metrics(esds: &[Esd], opts: &ShapeOptions) -> Vec<(&'static str, MetricValue)> {
    let selection = FitSelection::for_metrics(SHAPE_METRICS);
    let fits: Vec<LayerFits> = esds.iter().map(|e| fit_layer(e, selection, opts)).collect();
    SHAPE_METRICS
        .iter()
        .map(|&name| {
            let values: Vec<MetricValue> = esds
                .iter()
                .zip(&fits)
                .map(|(e, f)| layer_value(name, e, f).unwrap().0)
                .collect();
            (name, aggregate_values(Aggregation::Mean, &values).0)
        })
        .collect()
}

fn hybrid(metric: &str, esds: &[Esd], pl_fits: &[TailFit]) -> MetricValue {
    let values: Vec<MetricValue> = esds
        .iter()
        .zip(pl_fits)
        .map(|(e, f)| {
            let fits = LayerFits {
                layer: e.matrix_name.clone(),
                fits: vec![f.clone()],
                failures: vec![],
            };
            layer_value(metric, e, &fits).unwrap().0
        })
        .collect();
    aggregate_values(Aggregation::Mean, &values).0
}

/// `(1/d) Σ αᵢ log λᵢ,max`.
pub fn alpha_weighted(esds: &[Esd], pl_fits: &[TailFit]) -> MetricValue {
    hybrid(names::ALPHA_WEIGHTED, esds, pl_fits)
}

/// `(1/d) Σ log Σⱼ λⱼ^αᵢ`.
pub fn log_alpha_norm(esds: &[Esd], pl_fits: &[TailFit]) -> MetricValue {
    hybrid(names::LOG_ALPHA_NORM, esds, pl_fits)
}
