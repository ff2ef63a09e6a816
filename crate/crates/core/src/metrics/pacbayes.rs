//! Perturbation-based sharpness searches and the PAC-Bayes metrics built on them.

use serde::{Deserialize, Serialize};

use super::{names, MetricFlag, MetricValue};
use crate::error::{Error, Result};
use crate::netprobe::{perturbed_loss_on, LossSurface, Perturbation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PacBayesConfig {
    /// Allowed increase of the expected training loss.
    pub delta: f64,
    /// Monte-Carlo draws per loss estimate.
    pub draws: usize,
    pub seed: u64,
    /// Bisection steps in `log σ`.
    pub iterations: usize,
    /// Floor of the magnitude-aware perturbation scale.
    pub epsilon: f64,
    /// Search bracket; multiplied by the parameter RMS for the isotropic search.
    pub bracket: (f64, f64),
}

impl Default for PacBayesConfig {
    fn default() -> Self {
        PacBayesConfig {
            delta: 0.5,
            draws: 10,
            seed: 0,
            iterations: 20,
            epsilon: 1e-3,
            bracket: (1e-5, 1e2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSearch {
    pub sigma: f64,
    pub magnitude_aware: bool,
    pub base_loss: f64,
    pub bound: f64,
    pub draws: usize,
    pub lower: f64,
    pub upper: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<MetricFlag>,
}

/// Largest σ whose expected perturbed loss stays within `base + δ`, by
/// bisection in `log σ`. Every σ reuses the same seeded normal draws.
pub fn pacbayes_sigma<S: LossSurface + ?Sized>(surface: &S, config: &PacBayesConfig, magnitude_aware: bool) -> Result<SigmaSearch> {
    let w = surface.parameters();
    let base = surface.loss_at(&w)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("training loss is not finite".into()));
    }
    let bound = base + config.delta;
    let (mode, scale) = if magnitude_aware {
        (Perturbation::MagnitudeAware { epsilon: config.epsilon }, 1.0)
    } else {
        let rms = (w.iter().map(|v| v * v).sum::<f64>() / w.len().max(1) as f64).sqrt();
        (Perturbation::Isotropic, if rms > 0.0 { rms } else { 1.0 })
    };
    let (lower, upper) = (config.bracket.0 * scale, config.bracket.1 * scale);
    let holds = |s: f64| -> Result<bool> { Ok(perturbed_loss_on(surface, s, mode, config.seed, config.draws)? <= bound) };
    let result = |sigma: f64, flag: Option<MetricFlag>| SigmaSearch {
        sigma,
        magnitude_aware,
        base_loss: base,
        bound,
        draws: config.draws,
        lower,
        upper,
        flag,
    };
    if !holds(lower)? {
        return Ok(result(lower, Some(MetricFlag::SigmaAtLowerBracket)));
    }
    if holds(upper)? {
        return Ok(result(upper, Some(MetricFlag::SigmaAtUpperBracket)));
    }
    let (mut lo, mut hi) = (lower.ln(), upper.ln());
    for _ in 0..config.iterations {
        let mid = 0.5 * (lo + hi);
        if holds(mid.exp())? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(result(lo.exp(), None))
}

/// Inputs to the PAC-Bayes metrics, all over the flattened parameter vector.
pub struct PacBayesInputs<'a> {
    pub params: &'a [f64],
    pub init: Option<&'a [f64]>,
    pub sigma: f64,
    pub sigma_mag: f64,
    /// Training-sample count.
    pub m: f64,
    pub epsilon: f64,
}

fn sq_norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum()
}

/// `¼ Σᵢ log((ε² + (σ'² + 1) μ²/ω) / (ε² + σ'² rᵢ²))`.
fn magnitude_term(mu_sq: f64, residuals: impl Iterator<Item = f64>, omega: f64, sigma_mag: f64, eps: f64) -> f64 {
    let e2 = eps * eps;
    let s2 = sigma_mag * sigma_mag;
    let num = e2 + (s2 + 1.0) * mu_sq / omega;
    0.25 * residuals.map(|r| (num / (e2 + s2 * r * r)).ln()).sum::<f64>()
}

/// The six PAC-Bayes metrics. `*_init` metrics are undefined without initial weights.
pub fn pacbayes_metrics(inp: &PacBayesInputs) -> Result<Vec<(&'static str, MetricValue)>> {
    let omega = inp.params.len() as f64;
    if let Some(init) = inp.init {
        if init.len() != inp.params.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters vs {} initial parameters",
                inp.params.len(),
                init.len()
            )));
        }
    }
    let (s, sp) = (inp.sigma, inp.sigma_mag);
    let log_term = (inp.m / s).ln() + 10.0;
    let l2_sq = sq_norm(inp.params.iter().copied());
    let no_init = || MetricValue::undefined("no initialization weights");

    let (init_v, mag_init_v) = match inp.init {
        Some(init) => {
            let diffs = || inp.params.iter().zip(init).map(|(w, w0)| w - w0);
            let dist_sq = sq_norm(diffs());
            (
                MetricValue::from(dist_sq / (4.0 * s * s) + log_term),
                MetricValue::from(magnitude_term(dist_sq, diffs(), omega, sp, inp.epsilon) + log_term),
            )
        }
        None => (no_init(), no_init()),
    };
    let mag_orig = magnitude_term(l2_sq, inp.params.iter().copied(), omega, sp, inp.epsilon) + log_term;
    Ok(vec![
        (names::PACBAYES_INIT, init_v),
        (names::PACBAYES_ORIG, MetricValue::from(l2_sq / (4.0 * s * s) + log_term)),
        (names::PACBAYES_FLATNESS, MetricValue::from(1.0 / (s * s))),
        (names::PACBAYES_MAG_INIT, mag_init_v),
        (names::PACBAYES_MAG_ORIG, MetricValue::from(mag_orig)),
        (names::PACBAYES_MAG_FLATNESS, MetricValue::from(1.0 / (sp * sp))),
    ])
}
