use super::{empty_fit, ks_statistic, resolve_xmin, Family, FitConfig, QualityFlag, TailFit, XminStrategy};
use crate::error::{Error, Result};
use crate::esd::Esd;
use crate::numeric::{bisect_root, cumulative_integral, golden_section_max, integrate, nelder_mead};

const GRID: usize = 40;
const BETA_RANGE: (f64, f64) = (-1.0, 6.0);
// log10 bounds of λ·x̄_tail on the seeding grid
const LAMBDA_DECADES: (f64, f64) = (-6.0, 2.0);

// Integrand of the E-TPL normalizer in t = ln(x / a), up to the factor a.
#[inline]
fn log_space_kernel(t: f64, beta: f64, lambda_a: f64) -> f64 {
    ((1.0 - beta) * t - lambda_a * t.exp_m1()).exp()
}

/// `∫_a^b (x/a)^-β exp(-λ(x - a)) dx`.
pub fn etpl_normalizer(beta: f64, lambda: f64, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    let la = lambda * a;
    let upper = (b / a).ln();
    Ok(a * integrate(|t| log_space_kernel(t, beta, la), 0.0, upper, rel_tol, 0.0)?)
}

/// E-TPL log-likelihood on `(a, b]` from the sufficient statistics
/// `sum_ln_ratio = Σ ln(x/a)` and `sum_excess = Σ (x - a)`.
#[allow(clippy::too_many_arguments)]
pub fn etpl_log_likelihood(
    beta: f64,
    lambda: f64,
    sum_ln_ratio: f64,
    sum_excess: f64,
    n: usize,
    a: f64,
    b: f64,
    rel_tol: f64,
) -> Result<f64> {
    let z = etpl_normalizer(beta, lambda, a, b, rel_tol)?;
    Ok(-beta * sum_ln_ratio - lambda * sum_excess - n as f64 * z.ln())
}

/// E-TPL CDF on `(a, b]` at each ascending point, by cumulative quadrature.
pub fn etpl_cdf(sorted: &[f64], beta: f64, lambda: f64, a: f64, b: f64, rel_tol: f64) -> Result<Vec<f64>> {
    let la = lambda * a;
    let upper = (b / a).ln();
    let ts: Vec<f64> = sorted.iter().map(|&x| (x / a).ln().clamp(0.0, upper)).collect();
    let kernel = |t: f64| log_space_kernel(t, beta, la);
    let partial = cumulative_integral(kernel, 0.0, &ts, rel_tol)?;
    let last_t = ts.last().copied().unwrap_or(0.0);
    let total = partial.last().copied().unwrap_or(0.0) + integrate(kernel, last_t, upper, rel_tol, 0.0)?;
    if !(total > 0.0) {
        return Err(Error::Quadrature(format!("E-TPL normalizer vanished (β={beta}, λ={lambda})")));
    }
    Ok(partial.iter().map(|p| (p / total).min(1.0)).collect())
}

pub(crate) fn exp_cdf(x: f64, lambda: f64, a: f64, b: f64) -> f64 {
    if x <= a {
        return 0.0;
    }
    if x >= b {
        return 1.0;
    }
    let span = b - a;
    if lambda * span < 1e-12 {
        (x - a) / span
    } else {
        (-lambda * (x - a)).exp_m1() / (-lambda * span).exp_m1()
    }
}

/// Mean of `x - a` under the exponential truncated to `(a, a + span]`.
pub fn exp_mean_excess(lambda: f64, span: f64) -> f64 {
    let t = lambda * span;
    if t.abs() < 1e-4 {
        span * (0.5 - t / 12.0 + t.powi(3) / 720.0)
    } else {
        span * (1.0 / t - 1.0 / t.exp_m1())
    }
}

pub fn exp_log_likelihood(lambda: f64, sum_excess: f64, n: usize, span: f64) -> f64 {
    let n = n as f64;
    if lambda * span < 1e-12 {
        return -n * span.ln() - lambda * sum_excess + n * lambda * span / 2.0;
    }
    n * lambda.ln() - lambda * sum_excess - n * (-(-lambda * span).exp_m1()).ln()
}

struct TailStats<'a> {
    tail: &'a [f64],
    a: f64,
    b: f64,
    sum_ln_ratio: f64,
    sum_excess: f64,
    mean: f64,
}

fn tail_stats<'a>(esd: &'a Esd, strategy: XminStrategy, config: &FitConfig) -> Result<std::result::Result<TailStats<'a>, (f64, usize)>> {
    let pos = esd.positive();
    if pos.is_empty() || pos[0] == esd.lambda_max {
        return Err(Error::DegenerateSpectrum(format!(
            "{}: spectrum has no spread",
            esd.matrix_name
        )));
    }
    let a = resolve_xmin(esd, strategy, config)?;
    let b = esd.lambda_max;
    let tail = super::tail(esd, a);
    if tail.len() < 2 || a >= b || tail[0] == b {
        return Ok(Err((a, tail.len())));
    }
    let n = tail.len() as f64;
    Ok(Ok(TailStats {
        tail,
        a,
        b,
        sum_ln_ratio: tail.iter().map(|x| (x / a).ln()).sum(),
        sum_excess: tail.iter().map(|x| x - a).sum(),
        mean: tail.iter().sum::<f64>() / n,
    }))
}

/// Fits `p(x) ∝ x^-β exp(-λx)` on `(x_min, λ_max]`: a 40×40 log-grid seeds a
/// Nelder–Mead refinement of the joint likelihood, with `λ >= 0`.
pub fn fit_etpl(esd: &Esd, strategy: XminStrategy, config: &FitConfig) -> Result<TailFit> {
    let s = match tail_stats(esd, strategy, config)? {
        Ok(s) => s,
        Err((a, n)) => return Ok(empty_fit(Family::TruncatedPowerLaw, a, esd.lambda_max, n, strategy)),
    };
    let n = s.tail.len();
    let tol = config.quad_rel_tol;
    let loglik = |beta: f64, lambda: f64| -> f64 {
        etpl_log_likelihood(beta, lambda, s.sum_ln_ratio, s.sum_excess, n, s.a, s.b, tol).unwrap_or(f64::NEG_INFINITY)
    };
    // optimize over (β, λ·x̄) so both coordinates are O(1)
    let scale = s.mean;
    let objective = |v: &[f64]| -> f64 {
        let lam = v[1].max(0.0) / scale;
        let ll = loglik(v[0], lam);
        let penalty = if v[1] < 0.0 { n as f64 * v[1] * v[1] } else { 0.0 };
        if ll.is_finite() {
            -ll + penalty
        } else {
            f64::INFINITY
        }
    };

    let mut best = (f64::INFINITY, [0.0, 0.0]);
    let lambda_grid = std::iter::once(0.0).chain((0..GRID).map(|j| {
        10f64.powf(LAMBDA_DECADES.0 + (LAMBDA_DECADES.1 - LAMBDA_DECADES.0) * j as f64 / (GRID - 1) as f64)
    }));
    for lam in lambda_grid {
        for i in 0..GRID {
            let beta = BETA_RANGE.0 + (BETA_RANGE.1 - BETA_RANGE.0) * i as f64 / (GRID - 1) as f64;
            let v = objective(&[beta, lam]);
            if v < best.0 {
                best = (v, [beta, lam]);
            }
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Quadrature(format!("{}: E-TPL likelihood not finite on the seeding grid", esd.matrix_name)));
    }

    let beta_step = (BETA_RANGE.1 - BETA_RANGE.0) / (GRID - 1) as f64;
    let lam_step = if best.1[1] > 0.0 { 0.5 * best.1[1] } else { 1e-3 };
    let mut result = nelder_mead(objective, &best.1, &[beta_step, lam_step], 1e-14, 5000);
    // restart from the optimum to escape a collapsed simplex
    let restart_steps = [0.1 * beta_step, 0.1 * result.x[1].abs().max(1e-4)];
    let second = nelder_mead(objective, &result.x, &restart_steps, 1e-14, 5000);
    if second.value <= result.value {
        result = second;
    }
    if !result.converged {
        return Err(Error::NonConvergence(format!(
            "{}: E-TPL simplex stopped after {} iterations at β={}, λ·x̄={}",
            esd.matrix_name, result.iterations, result.x[0], result.x[1]
        )));
    }
    let beta = result.x[0];
    let lambda = result.x[1].max(0.0) / scale;
    let ll = etpl_log_likelihood(beta, lambda, s.sum_ln_ratio, s.sum_excess, n, s.a, s.b, tol)?;
    let cdf = etpl_cdf(s.tail, beta, lambda, s.a, s.b, tol)?;
    Ok(TailFit {
        beta: Some(beta),
        lambda: Some(lambda),
        ks_distance: ks_statistic(&cdf),
        log_likelihood: Some(ll),
        quality_flag: if n < config.min_tail { QualityFlag::InsufficientTail } else { QualityFlag::Ok },
        ..empty_fit(Family::TruncatedPowerLaw, s.a, s.b, n, strategy)
    })
}

/// Fits `p(x) ∝ exp(-λx)` on `(x_min, λ_max]` by solving the likelihood
/// equation `E_λ[x - x_min] = mean excess`, with `λ >= 0`.
pub fn fit_exp(esd: &Esd, strategy: XminStrategy, config: &FitConfig) -> Result<TailFit> {
    let s = match tail_stats(esd, strategy, config)? {
        Ok(s) => s,
        Err((a, n)) => return Ok(empty_fit(Family::Exponential, a, esd.lambda_max, n, strategy)),
    };
    let n = s.tail.len();
    let span = s.b - s.a;
    let excess = s.sum_excess / n as f64;
    let lambda = if excess >= span / 2.0 {
        0.0
    } else {
        bisect_root(|l| exp_mean_excess(l, span) - excess, 0.0, 1.0 / excess, 1e-15).unwrap_or_else(|| {
            golden_section_max(|l| exp_log_likelihood(l, s.sum_excess, n, span), 0.0, 10.0 / excess, 1e-12).0
        })
    };
    let cdf: Vec<f64> = s.tail.iter().map(|&x| exp_cdf(x, lambda, s.a, s.b)).collect();
    Ok(TailFit {
        lambda: Some(lambda),
        ks_distance: ks_statistic(&cdf),
        log_likelihood: Some(exp_log_likelihood(lambda, s.sum_excess, n, span)),
        quality_flag: if n < config.min_tail { QualityFlag::InsufficientTail } else { QualityFlag::Ok },
        ..empty_fit(Family::Exponential, s.a, s.b, n, strategy)
    })
}
