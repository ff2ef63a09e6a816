//! Maximum-likelihood tail fits to an ESD.
//!
//! Four families are supported, each restricted to the interval
//! `(x_min, x_max]` with `x_max` the largest eigenvalue:
//!
//! * PL: `p(x) ∝ x^-α`
//! * E-TPL: `p(x) ∝ x^-β exp(-λx)`
//! * EXP: `p(x) ∝ exp(-λx)`
//! * MP: the Marchenko–Pastur bulk, fitted by KS distance rather than likelihood.
//!
//! `x_min` is either searched (minimal KS distance, PL only), taken from the
//! histogram peak ("fix-finger"), or supplied.

mod etpl;
mod ks;
mod mp;
mod pl;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::esd::{esd_histogram, Esd, DEFAULT_BINS};

pub use etpl::{etpl_cdf, etpl_log_likelihood, etpl_normalizer, exp_log_likelihood, exp_mean_excess, fit_etpl, fit_exp};
pub use ks::{ks_critical_value, ks_statistic, two_sample_ks};
pub use mp::{fit_mp, mp_bulk_edges, mp_cdf_sorted, mp_density};
pub use pl::{fit_pl, pl_cdf, pl_log_likelihood, pl_mle_untruncated};

/// PL fits above this exponent are unreliable.
pub const POOR_PL_ALPHA: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "PL")]
    PowerLaw,
    #[serde(rename = "ETPL")]
    TruncatedPowerLaw,
    #[serde(rename = "EXP")]
    Exponential,
    #[serde(rename = "MP")]
    MarchenkoPastur,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::PowerLaw => "PL",
            Family::TruncatedPowerLaw => "ETPL",
            Family::Exponential => "EXP",
            Family::MarchenkoPastur => "MP",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityFlag {
    Ok,
    PoorPlFit,
    InsufficientTail,
    /// Every positive eigenvalue is identical (MP fits only).
    DegenerateSpectrum,
}

/// How `x_min` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XminStrategy {
    KsSearch,
    FixFinger,
    Fixed(f64),
}

impl fmt::Display for XminStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            XminStrategy::KsSearch => f.write_str("ks"),
            XminStrategy::FixFinger => f.write_str("fixfinger"),
            XminStrategy::Fixed(v) => write!(f, "{v:?}"),
        }
    }
}

impl FromStr for XminStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ks" | "ks_search" => Ok(XminStrategy::KsSearch),
            "fixfinger" | "fix_finger" => Ok(XminStrategy::FixFinger),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .map(XminStrategy::Fixed)
                .ok_or_else(|| Error::InvalidArgument(format!("x_min strategy must be ks, fixfinger or a positive number, got {other:?}"))),
        }
    }
}

impl Serialize for XminStrategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            XminStrategy::Fixed(v) => s.serialize_f64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for XminStrategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(XminStrategy::Fixed(v)),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Tunables shared by all fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub min_tail: usize,
    pub n_bins: usize,
    pub alpha_max: f64,
    pub quad_rel_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            min_tail: 8,
            n_bins: DEFAULT_BINS,
            alpha_max: 12.0,
            quad_rel_tol: 1e-10,
        }
    }
}

/// One fitted distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_mp: Option<f64>,
    /// Upper MP bulk edge λ⁺ (MP fits only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bulk_edge: Option<f64>,
    /// Column-to-row ratio `1/Q` the MP law was fitted with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mp_ratio: Option<f64>,
    pub x_min: f64,
    pub x_max: f64,
    pub ks_distance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_likelihood: Option<f64>,
    pub n_tail: usize,
    pub quality_flag: QualityFlag,
    pub xmin_strategy: XminStrategy,
}

impl TailFit {
    /// True when the family parameters were estimated.
    pub fn has_parameters(&self) -> bool {
        match self.family {
            Family::PowerLaw => self.alpha.is_some(),
            Family::TruncatedPowerLaw => self.beta.is_some() && self.lambda.is_some(),
            Family::Exponential => self.lambda.is_some(),
            Family::MarchenkoPastur => self.sigma_mp.is_some(),
        }
    }

    /// The sample the fit describes: positive eigenvalues `>= x_min`, or for
    /// MP the positive eigenvalues up to the bulk edge.
    pub fn sample<'a>(&self, esd: &'a Esd) -> &'a [f64] {
        match self.family {
            Family::MarchenkoPastur => {
                let edge = self.bulk_edge.unwrap_or(f64::INFINITY);
                let pos = esd.positive();
                &pos[..pos.partition_point(|&v| v <= edge)]
            }
            _ => tail(esd, self.x_min),
        }
    }

    /// Fitted CDF on `(x_min, x_max]` at each point of the ascending `sorted`.
    pub fn cdf_values(&self, sorted: &[f64]) -> Result<Vec<f64>> {
        let missing = || Error::InvalidArgument(format!("{} fit has no parameters", self.family));
        let (a, b) = (self.x_min, self.x_max);
        match self.family {
            Family::PowerLaw => {
                let alpha = self.alpha.ok_or_else(missing)?;
                Ok(sorted.iter().map(|&x| pl_cdf(x, alpha, a, b)).collect())
            }
            Family::Exponential => {
                let lambda = self.lambda.ok_or_else(missing)?;
                Ok(sorted.iter().map(|&x| etpl::exp_cdf(x, lambda, a, b)).collect())
            }
            Family::TruncatedPowerLaw => {
                let (beta, lambda) = (self.beta.ok_or_else(missing)?, self.lambda.ok_or_else(missing)?);
                etpl_cdf(sorted, beta, lambda, a, b, FitConfig::default().quad_rel_tol)
            }
            Family::MarchenkoPastur => {
                let sigma = self.sigma_mp.ok_or_else(missing)?;
                let y = self.mp_ratio.ok_or_else(missing)?;
                mp_cdf_sorted(sorted, sigma, y)
            }
        }
    }
}

impl TailFit {
    /// Fitted density at each of `xs`, zero outside `[x_min, x_max]`. MP
    /// densities are not truncated.
    pub fn density(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let missing = || Error::InvalidArgument(format!("{} fit has no parameters", self.family));
        let (a, b) = (self.x_min, self.x_max);
        let inside = |x: f64| x >= a && x <= b;
        let ln_r = (b / a).ln();
        let f: Box<dyn Fn(f64) -> f64> = match self.family {
            Family::PowerLaw => {
                let alpha = self.alpha.ok_or_else(missing)?;
                let z = if (alpha - 1.0).abs() < 1e-12 {
                    a * ln_r
                } else {
                    a * -((1.0 - alpha) * ln_r).exp_m1() / (alpha - 1.0)
                };
                Box::new(move |x| (x / a).powf(-alpha) / z)
            }
            Family::TruncatedPowerLaw => {
                let (beta, lambda) = (self.beta.ok_or_else(missing)?, self.lambda.ok_or_else(missing)?);
                let z = etpl_normalizer(beta, lambda, a, b, FitConfig::default().quad_rel_tol)?;
                Box::new(move |x| (x / a).powf(-beta) * (-lambda * (x - a)).exp() / z)
            }
            Family::Exponential => {
                let lambda = self.lambda.ok_or_else(missing)?;
                if lambda == 0.0 {
                    Box::new(move |_| 1.0 / (b - a))
                } else {
                    let z = -(-lambda * (b - a)).exp_m1() / lambda;
                    Box::new(move |x| (-lambda * (x - a)).exp() / z)
                }
            }
            Family::MarchenkoPastur => {
                let sigma = self.sigma_mp.ok_or_else(missing)?;
                let y = self.mp_ratio.ok_or_else(missing)?;
                return Ok(xs.iter().map(|&x| mp_density(x, sigma, y)).collect());
            }
        };
        Ok(xs.iter().map(|&x| if inside(x) { f(x) } else { 0.0 }).collect())
    }
}

/// Positive eigenvalues `>= x_min`, ascending.
pub fn tail(esd: &Esd, x_min: f64) -> &[f64] {
    let pos = esd.positive();
    &pos[pos.partition_point(|&v| v < x_min)..]
}

/// Geometric center of the most populated log-spaced bin; ties go to the
/// lower bin.
pub fn fix_finger_xmin(esd: &Esd, n_bins: usize) -> Result<f64> {
    let hist = esd_histogram(esd, n_bins, true)?;
    let mut best = 0;
    for (i, b) in hist.bins.iter().enumerate() {
        if b.count > hist.bins[best].count {
            best = i;
        }
    }
    Ok(hist.bins[best].center)
}

/// Sup-distance between the fitted CDF and the empirical CDF of the fit's sample.
pub fn ks_distance(fit: &TailFit, esd: &Esd) -> Result<f64> {
    let sample = fit.sample(esd);
    if sample.is_empty() {
        return Ok(1.0);
    }
    let cdf = fit.cdf_values(sample)?;
    Ok(ks_statistic(&cdf))
}

pub(crate) fn resolve_xmin(esd: &Esd, strategy: XminStrategy, config: &FitConfig) -> Result<f64> {
    match strategy {
        XminStrategy::FixFinger => fix_finger_xmin(esd, config.n_bins),
        XminStrategy::Fixed(v) if v > 0.0 && v.is_finite() => Ok(v),
        XminStrategy::Fixed(v) => Err(Error::InvalidArgument(format!("x_min must be positive, got {v}"))),
        XminStrategy::KsSearch => Err(Error::InvalidArgument("KS x_min search is only available for PL fits".into())),
    }
}

/// Fit result without parameters, used when the tail is too small to estimate anything.
pub(crate) fn empty_fit(family: Family, x_min: f64, x_max: f64, n_tail: usize, strategy: XminStrategy) -> TailFit {
    TailFit {
        family,
        alpha: None,
        beta: None,
        lambda: None,
        sigma_mp: None,
        bulk_edge: None,
        mp_ratio: None,
        x_min,
        x_max,
        ks_distance: 1.0,
        log_likelihood: None,
        n_tail,
        quality_flag: QualityFlag::InsufficientTail,
        xmin_strategy: strategy,
    }
}

/// The maximized E-TPL log-likelihood with `λ = 0` equals the PL one, so
/// the nesting check compares both on an identical sample.
pub fn nested_log_likelihoods(esd: &Esd, x_min: f64, config: &FitConfig) -> Result<(f64, f64)> {
    let pl = fit_pl(esd, XminStrategy::Fixed(x_min), config)?;
    let etpl = fit_etpl(esd, XminStrategy::Fixed(x_min), config)?;
    match (pl.log_likelihood, etpl.log_likelihood) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::DegenerateSpectrum("tail too small for nested comparison".into())),
    }
}
